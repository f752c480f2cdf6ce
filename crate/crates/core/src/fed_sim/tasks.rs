//! Synthetic learning tasks with exact full-batch gradients.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::{stream, Purpose};

/// Width of each hidden layer of the tiny MLP.
pub const MLP_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Least squares on Gaussian features with a planted linear model.
    LinearRegression,
    /// Two Gaussian blobs, binary cross-entropy.
    LogisticRegression,
    /// Two interleaved 2-D spirals, `2 → 16 → 16 → 1` tanh network.
    TinyMlp,
}

/// How training samples are dealt to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Iid,
    /// Sorted by target, then cut into contiguous shards.
    LabelSorted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub clients: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Input width for the regression tasks; the MLP always uses 2.
    pub features: usize,
    pub partition: Partition,
    /// Distance between the two blob means (logistic task).
    pub separation: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, clients: usize) -> Self {
        Self {
            kind,
            clients,
            samples_per_client: 50,
            test_samples: 2000,
            features: 19,
            partition: Partition::Iid,
            separation: 3.0,
        }
    }
}

/// Row-major inputs and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

/// Source of exact full-batch gradients `∇F(w)`.
pub trait GradientOracle {
    fn full_gradient(&self, w: &[f64]) -> Option<Vec<f64>>;
}

/// A generated task: train/test data and the client shards of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    kind: TaskKind,
    train: Dataset,
    test: Dataset,
    shards: Vec<Vec<usize>>,
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl Task {
    pub fn generate(spec: &TaskSpec, seed: u64) -> Result<Self> {
        if spec.clients == 0 || spec.samples_per_client == 0 {
            return Err(invalid("a task needs at least one client and one sample per client"));
        }
        if spec.kind != TaskKind::TinyMlp && spec.features == 0 {
            return Err(invalid("feature count must be positive"));
        }
        let n_train = spec.clients * spec.samples_per_client;
        let mut rng = stream(seed, Purpose::Dataset, 0, 0);
        let (train, test) = match spec.kind {
            TaskKind::LinearRegression => {
                let w: Vec<f64> = (0..spec.features)
                    .map(|_| gaussian(&mut rng) / libm::sqrt(spec.features as f64))
                    .collect();
                let mut draw = |count: usize| linear_data(&w, 0.5, count, &mut rng);
                (draw(n_train), draw(spec.test_samples))
            }
            TaskKind::LogisticRegression => {
                let mut u: Vec<f64> = (0..spec.features).map(|_| gaussian(&mut rng)).collect();
                let norm = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
                u.iter_mut().for_each(|x| *x *= 0.5 * spec.separation / norm);
                let mut draw = |count: usize| blob_data(&u, count, &mut rng);
                (draw(n_train), draw(spec.test_samples))
            }
            TaskKind::TinyMlp => (spiral_data(n_train, &mut rng), spiral_data(spec.test_samples, &mut rng)),
        };
        let mut order: Vec<usize> = (0..n_train).collect();
        match spec.partition {
            Partition::Iid => order.shuffle(&mut rng),
            Partition::LabelSorted => order.sort_by(|&a, &b| train.targets[a].total_cmp(&train.targets[b]).then(a.cmp(&b))),
        }
        let shards = order.chunks(spec.samples_per_client).map(<[usize]>::to_vec).collect();
        Ok(Self {
            kind: spec.kind,
            train,
            test,
            shards,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    /// Training-set indices held by `client`.
    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            TaskKind::LinearRegression | TaskKind::LogisticRegression => self.train.width + 1,
            TaskKind::TinyMlp => 2 * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN + 1,
        }
    }

    /// Zeros for the convex tasks, scaled Gaussian weights for the MLP.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let p = self.param_count();
        match self.kind {
            TaskKind::TinyMlp => {
                let mut rng = stream(seed, Purpose::Init, 0, 0);
                let layout = MlpLayout::new();
                let mut w = alloc::vec![0.0; p];
                for (range, fan_in) in [(layout.w1(), 2), (layout.w2(), MLP_HIDDEN), (layout.w3(), MLP_HIDDEN)] {
                    let scale = 1.0 / libm::sqrt(fan_in as f64);
                    for x in &mut w[range] {
                        *x = scale * gaussian(&mut rng);
                    }
                }
                w
            }
            _ => alloc::vec![0.0; p],
        }
    }

    /// Mean loss and its gradient over `indices` of `data`.
    pub fn loss_and_grad(&self, w: &[f64], data: &Dataset, indices: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = alloc::vec![0.0; w.len()];
        let mut loss = 0.0;
        if indices.is_empty() {
            return (0.0, grad);
        }
        for &i in indices {
            loss += self.sample_loss_grad(w, data.input(i), data.target(i), Some(&mut grad));
        }
        let inv = 1.0 / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, grad)
    }

    pub fn loss(&self, w: &[f64], data: &Dataset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| self.sample_loss_grad(w, data.input(i), data.target(i), None))
            .sum();
        total / data.len().max(1) as f64
    }

    /// Test-set classification accuracy; `None` for regression.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        if self.kind == TaskKind::LinearRegression || self.test.is_empty() {
            return None;
        }
        let correct = (0..self.test.len())
            .filter(|&i| (self.predict(w, self.test.input(i)) >= 0.0) == (self.test.target(i) > 0.5))
            .count();
        Some(correct as f64 / self.test.len() as f64)
    }

    /// Upper bound on the smoothness constant of the training loss for the
    /// convex tasks: the trace of the (scaled) feature second-moment matrix.
    pub fn smoothness_bound(&self) -> Option<f64> {
        let n = self.train.len() as f64;
        let trace = (0..self.train.len())
            .map(|i| 1.0 + self.train.input(i).iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / n;
        match self.kind {
            TaskKind::LinearRegression => Some(trace),
            TaskKind::LogisticRegression => Some(0.25 * trace),
            TaskKind::TinyMlp => None,
        }
    }

    /// Raw model output: the prediction for regression, the logit otherwise.
    fn predict(&self, w: &[f64], x: &[f64]) -> f64 {
        match self.kind {
            TaskKind::LinearRegression | TaskKind::LogisticRegression => linear(w, x),
            TaskKind::TinyMlp => MlpLayout::new().forward(w, x).output,
        }
    }

    fn sample_loss_grad(&self, w: &[f64], x: &[f64], y: f64, grad: Option<&mut Vec<f64>>) -> f64 {
        match self.kind {
            TaskKind::LinearRegression => {
                let r = linear(w, x) - y;
                if let Some(g) = grad {
                    accumulate_linear(g, x, r);
                }
                0.5 * r * r
            }
            TaskKind::LogisticRegression => {
                let z = linear(w, x);
                if let Some(g) = grad {
                    accumulate_linear(g, x, sigmoid(z) - y);
                }
                logistic_loss(z, y)
            }
            TaskKind::TinyMlp => {
                let layout = MlpLayout::new();
                let pass = layout.forward(w, x);
                if let Some(g) = grad {
                    layout.backward(w, x, &pass, sigmoid(pass.output) - y, g);
                }
                logistic_loss(pass.output, y)
            }
        }
    }
}

impl GradientOracle for Task {
    fn full_gradient(&self, w: &[f64]) -> Option<Vec<f64>> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        Some(self.loss_and_grad(w, &self.train, &all).1)
    }
}

fn linear(w: &[f64], x: &[f64]) -> f64 {
    let (bias, weights) = w.split_last().expect("linear model has a bias");
    weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

fn accumulate_linear(g: &mut [f64], x: &[f64], r: f64) {
    let (bias, weights) = g.split_last_mut().expect("linear model has a bias");
    for (gi, xi) in weights.iter_mut().zip(x) {
        *gi += r * xi;
    }
    *bias += r;
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

/// `-y·ln σ(z) - (1-y)·ln(1-σ(z))`, stable for large `|z|`.
fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()))
}

fn linear_data<R: Rng>(w: &[f64], bias: f64, count: usize, rng: &mut R) -> Dataset {
    let width = w.len();
    let mut inputs = Vec::with_capacity(count * width);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..width).map(|_| gaussian(rng)).collect();
        let y = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + bias + 0.1 * gaussian(rng);
        inputs.extend_from_slice(&x);
        targets.push(y);
    }
    Dataset { inputs, targets, width }
}

fn blob_data<R: Rng>(half_mean: &[f64], count: usize, rng: &mut R) -> Dataset {
    let width = half_mean.len();
    let mut inputs = Vec::with_capacity(count * width);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random::<bool>();
        let sign = if label { 1.0 } else { -1.0 };
        inputs.extend(half_mean.iter().map(|&m| sign * m + gaussian(rng)));
        targets.push(if label { 1.0 } else { 0.0 });
    }
    Dataset { inputs, targets, width }
}

fn spiral_data<R: Rng>(count: usize, rng: &mut R) -> Dataset {
    let mut inputs = Vec::with_capacity(count * 2);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random::<bool>();
        let t: f64 = rng.random_range(0.05..1.0);
        let angle = 2.5 * core::f64::consts::PI * t + if label { core::f64::consts::PI } else { 0.0 };
        inputs.push(2.0 * t * libm::cos(angle) + 0.05 * gaussian(rng));
        inputs.push(2.0 * t * libm::sin(angle) + 0.05 * gaussian(rng));
        targets.push(if label { 1.0 } else { 0.0 });
    }
    Dataset {
        inputs,
        targets,
        width: 2,
    }
}

/// Parameter layout `[W1 (16×2), b1, W2 (16×16), b2, w3 (16), b3]`.
struct MlpLayout;

struct MlpPass {
    h1: [f64; MLP_HIDDEN],
    h2: [f64; MLP_HIDDEN],
    output: f64,
}

impl MlpLayout {
    fn new() -> Self {
        Self
    }

    fn w1(&self) -> core::ops::Range<usize> {
        0..2 * MLP_HIDDEN
    }

    fn b1(&self) -> usize {
        2 * MLP_HIDDEN
    }

    fn w2(&self) -> core::ops::Range<usize> {
        let s = self.b1() + MLP_HIDDEN;
        s..s + MLP_HIDDEN * MLP_HIDDEN
    }

    fn b2(&self) -> usize {
        self.w2().end
    }

    fn w3(&self) -> core::ops::Range<usize> {
        let s = self.b2() + MLP_HIDDEN;
        s..s + MLP_HIDDEN
    }

    fn b3(&self) -> usize {
        self.w3().end
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> MlpPass {
        let mut h1 = [0.0; MLP_HIDDEN];
        for (j, h) in h1.iter_mut().enumerate() {
            let z = w[2 * j] * x[0] + w[2 * j + 1] * x[1] + w[self.b1() + j];
            *h = libm::tanh(z);
        }
        let w2 = &w[self.w2()];
        let mut h2 = [0.0; MLP_HIDDEN];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &w2[j * MLP_HIDDEN..(j + 1) * MLP_HIDDEN];
            let z = row.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>() + w[self.b2() + j];
            *h = libm::tanh(z);
        }
        let output = w[self.w3()].iter().zip(&h2).map(|(a, b)| a * b).sum::<f64>() + w[self.b3()];
        MlpPass { h1, h2, output }
    }

    /// Adds `∂loss/∂w` to `g` given `∂loss/∂output = d_out`.
    fn backward(&self, w: &[f64], x: &[f64], pass: &MlpPass, d_out: f64, g: &mut [f64]) {
        let w3 = self.w3();
        let mut d2 = [0.0; MLP_HIDDEN];
        for j in 0..MLP_HIDDEN {
            g[w3.start + j] += d_out * pass.h2[j];
            d2[j] = d_out * w[w3.start + j] * (1.0 - pass.h2[j] * pass.h2[j]);
        }
        g[self.b3()] += d_out;
        let w2 = self.w2();
        let mut d1 = [0.0; MLP_HIDDEN];
        for (j, &dj) in d2.iter().enumerate() {
            for i in 0..MLP_HIDDEN {
                g[w2.start + j * MLP_HIDDEN + i] += dj * pass.h1[i];
                d1[i] += dj * w[w2.start + j * MLP_HIDDEN + i];
            }
            g[self.b2() + j] += dj;
        }
        for i in 0..MLP_HIDDEN {
            let di = d1[i] * (1.0 - pass.h1[i] * pass.h1[i]);
            g[2 * i] += di * x[0];
            g[2 * i + 1] += di * x[1];
            g[self.b1() + i] += di;
        }
    }
}
