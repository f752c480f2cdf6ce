//! The federated round loop: subsample, train locally, clip, then hand the
//! updates to the compression and aggregation pipeline and apply the mean.

mod convergence;
pub mod pipeline;
pub mod tasks;

use alloc::vec::Vec;
use core::time::Duration;

use rand::seq::{index, SliceRandom};

use crate::accountant::AccountantState;
use crate::compressor::{clip, default_g_max, sensitivity, ClippedUpdate};
use crate::discrete_gaussian::DiscreteGaussian;
use crate::error::{invalid, Error, Result};
use crate::lattice::LatticeSpec;
use crate::rng::{derive_seed, stream, Purpose};
use crate::secure_agg::{minimal_modulus, overflow_probability, plaintext_bound, WireFormat};

pub use convergence::{convergence_report, ConvergenceReport, SmoothnessInputs};
pub use pipeline::{AggregationPath, ClientMessage, Protocol, Recovered, RoundMaterial};
pub use tasks::{GradientOracle, Partition, Task, TaskKind, TaskSpec};

/// Largest per-round overflow probability accepted without an override.
pub const MAX_OVERFLOW_PROBABILITY: f64 = 1e-9;

/// Default failure probability of the ℓ∞ clamp used to pick `g_max`.
pub const DEFAULT_ROTATION_DELTA: f64 = 1e-3;

/// Local optimizer: `epochs` passes of minibatch SGD over the client's shard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainerSpec {
    pub epochs: u32,
    /// `0` means full batch.
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainerSpec {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 10,
            lr: 0.1,
        }
    }
}

impl LocalTrainerSpec {
    /// One full-batch gradient step per round.
    pub fn single_step(lr: f64) -> Self {
        Self {
            epochs: 1,
            batch_size: 0,
            lr,
        }
    }

    pub fn is_single_step(&self) -> bool {
        self.epochs == 1 && self.batch_size == 0
    }
}

/// How the noise scale is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Standard deviation in update (real) units; `0` disables noise.
    Sigma(f64),
    /// `σ / Δ₂`, with `Δ₂` the sensitivity of the quantized sum.
    Multiplier(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    /// Total clients `n`.
    pub clients: usize,
    pub gamma: f64,
    pub rounds: u64,
    /// ℓ₂ clip bound `D`.
    pub clip: f64,
    pub k: u32,
    /// Coarse modulus; the smallest safe odd value when `None`.
    pub q: Option<u64>,
    pub noise: NoiseLevel,
    pub delta: f64,
    /// Coordinate bound after rotation; derived from `rotation_delta` when `None`.
    pub g_max: Option<f64>,
    pub rotation_delta: f64,
    pub seed: u64,
    pub local: LocalTrainerSpec,
    pub path: AggregationPath,
    pub allow_overflow_risk: bool,
}

impl RoundConfig {
    pub fn new(clients: usize, gamma: f64, rounds: u64) -> Self {
        Self {
            clients,
            gamma,
            rounds,
            clip: 1.0,
            k: 16,
            q: None,
            noise: NoiseLevel::Sigma(0.0),
            delta: 1e-5,
            g_max: None,
            rotation_delta: DEFAULT_ROTATION_DELTA,
            seed: 0,
            local: LocalTrainerSpec::default(),
            path: AggregationPath::Masked,
            allow_overflow_risk: false,
        }
    }

    /// `⌊γn⌋`, tolerating the rounding of `γ·n` in binary floating point.
    pub fn participants(&self) -> Result<u32> {
        participant_count(self.clients, self.gamma)
    }

    /// Validates the configuration and fixes every derived protocol quantity
    /// for a model of `dim` parameters.
    pub fn resolve(&self, dim: usize) -> Result<Resolved> {
        let m = self.participants()?;
        if dim == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(invalid("clip bound must be positive"));
        }
        if self.k < 2 {
            return Err(invalid("k must be at least 2"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.rotation_delta > 0.0 && self.rotation_delta < 1.0) {
            return Err(invalid("delta and rotation_delta must lie in (0, 1)"));
        }
        if !(self.local.lr > 0.0) || self.local.epochs == 0 {
            return Err(invalid("local training needs lr > 0 and at least one epoch"));
        }
        let d_pad = dim.next_power_of_two();
        let g_max = match self.g_max {
            Some(g) => g,
            None => default_g_max(m as usize, d_pad, self.clip, self.rotation_delta),
        };
        let sens = sensitivity(self.clip, d_pad, self.k)?;
        let sigma = match self.noise {
            NoiseLevel::Sigma(s) => s,
            NoiseLevel::Multiplier(z) => z * sens,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid("noise scale must be finite and non-negative"));
        }
        let step = 2.0 * g_max / f64::from(self.k - 1);
        let sigma_units = sigma / step;
        let q = match self.q {
            Some(q) => q,
            None => minimal_modulus(self.k, sigma_units, m),
        };
        let spec = LatticeSpec::new(g_max, self.k, q, m)?;
        let wire = WireFormat::for_protocol(&spec, m)?;
        let overflow = overflow_probability(&spec, &wire, m, sigma_units, d_pad)?;
        if overflow > MAX_OVERFLOW_PROBABILITY && !self.allow_overflow_risk {
            return Err(invalid(alloc::format!(
                "per-round overflow probability {overflow:e} exceeds {MAX_OVERFLOW_PROBABILITY:e}; raise q or allow the risk explicitly"
            )));
        }
        let noise = if sigma > 0.0 {
            Some(DiscreteGaussian::new(sigma, &spec)?)
        } else {
            None
        };
        let protocol = Protocol {
            spec,
            wire,
            noise,
            dim,
            d_pad,
            plaintext_bound: Some(plaintext_bound(&spec, &wire, m, sigma_units)),
            path: self.path,
        };
        Ok(Resolved {
            participants: m,
            sigma,
            sigma_units,
            sensitivity: sens,
            overflow_probability: overflow,
            protocol,
        })
    }
}

/// A validated configuration's derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub participants: u32,
    /// Noise standard deviation in real units.
    pub sigma: f64,
    /// The same in lattice units, `σ / step`.
    pub sigma_units: f64,
    /// `Δ₂` in real units.
    pub sensitivity: f64,
    pub overflow_probability: f64,
    pub protocol: Protocol,
}

impl Resolved {
    /// Fresh ledger for these rounds, in lattice units.
    pub fn accountant(&self, gamma: f64) -> Result<AccountantState> {
        let step = self.protocol.spec.step();
        AccountantState::new(self.sigma_units, self.sensitivity / step, gamma)
    }
}

fn participant_count(clients: usize, gamma: f64) -> Result<u32> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma must lie in (0, 1]"));
    }
    let m = libm::floor(gamma * clients as f64 * (1.0 + 4.0 * f64::EPSILON));
    if m < 1.0 {
        return Err(invalid("gamma · n must be at least 1"));
    }
    u32::try_from(m as u64).map_err(|_| invalid("too many participants"))
}

/// Uniform sample of `⌊γn⌋` distinct clients, in increasing order.
pub fn subsample_clients(clients: usize, gamma: f64, round_seed: u64) -> Result<Vec<u32>> {
    let m = participant_count(clients, gamma)? as usize;
    if clients > u32::MAX as usize {
        return Err(invalid("client ids must fit in 32 bits"));
    }
    let mut rng = stream(round_seed, Purpose::Subsample, 0, 0);
    let mut ids: Vec<u32> = index::sample(&mut rng, clients, m).into_iter().map(|i| i as u32).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// `w_local - w` after local SGD on the client's shard.
pub fn local_update(task: &Task, w: &[f64], client: u32, spec: &LocalTrainerSpec, round_seed: u64) -> Vec<f64> {
    let shard = task.shard(client as usize);
    let mut local = w.to_vec();
    let mut order = shard.to_vec();
    let mut rng = stream(round_seed, Purpose::LocalTraining, u64::from(client), 0);
    let batch = if spec.batch_size == 0 { shard.len().max(1) } else { spec.batch_size };
    for _ in 0..spec.epochs {
        if batch < shard.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (_, g) = task.loss_and_grad(&local, task.train(), chunk);
            local.iter_mut().zip(&g).for_each(|(x, gi)| *x -= spec.lr * gi);
        }
    }
    local.iter().zip(w).map(|(a, b)| a - b).collect()
}

/// Per-client work of a round: local training then clipping.
pub fn client_update(task: &Task, w: &[f64], client: u32, cfg: &RoundConfig, round_seed: u64) -> Result<ClippedUpdate> {
    clip(&local_update(task, w, client, &cfg.local, round_seed), cfg.clip)
}

/// Maps per-client closures, serially or in parallel. Implementations must
/// return results in index order.
pub trait ClientExecutor {
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl ClientExecutor for Serial {
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub w: Vec<f64>,
    /// Rounds applied so far.
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub round: u64,
    pub selected: Vec<u32>,
    pub bytes_per_client: Vec<usize>,
    /// The applied mean update `g̃`, in model coordinates.
    pub aggregate: Vec<f64>,
    /// The noise draw, lattice units, padded length.
    pub nu: Vec<i64>,
    /// Exact mean of the clipped updates `ḡ`.
    pub mean_clipped: Vec<f64>,
    pub model_before: Vec<f64>,
    /// Wire payloads in selection order.
    pub payloads: Vec<Vec<i64>>,
    /// Coordinates changed by the ℓ∞ clamp, over all clients.
    pub clamped: usize,
    pub wall_time: Option<Duration>,
}

impl RoundTranscript {
    /// `‖g̃ - ḡ‖²`.
    pub fn squared_error(&self) -> f64 {
        self.aggregate
            .iter()
            .zip(&self.mean_clipped)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// One round, advancing `model` by the recovered mean update.
pub fn run_round<E: ClientExecutor>(
    model: &GlobalModel,
    task: &Task,
    cfg: &RoundConfig,
    resolved: &Resolved,
    exec: &E,
) -> Result<(GlobalModel, RoundTranscript)> {
    let round = model.t + 1;
    let protocol = &resolved.protocol;
    if model.w.len() != protocol.dim {
        return Err(invalid("model length differs from the resolved dimension"));
    }
    if task.clients() != cfg.clients {
        return Err(invalid("task client count differs from the configuration"));
    }
    let round_seed = derive_seed(cfg.seed, Purpose::Round, round, 0);
    let ids = subsample_clients(cfg.clients, cfg.gamma, round_seed)?;
    let updates = exec
        .map(ids.len(), |i| client_update(task, &model.w, ids[i], cfg, round_seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let material = RoundMaterial::draw(protocol, round_seed, &ids)?;
    let messages = exec
        .map(ids.len(), |i| pipeline::client_message(protocol, &material, round_seed, i as u32, ids[i], &updates[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let recovered = pipeline::recover(protocol, &material, &messages)?;

    let w: Vec<f64> = model.w.iter().zip(&recovered.mean).map(|(a, b)| a + b).collect();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { round });
    }
    let transcript = RoundTranscript {
        round,
        selected: ids,
        bytes_per_client: messages.iter().map(|m| m.masked.byte_len).collect(),
        aggregate: recovered.mean,
        nu: material.nu.iter().map(|p| p.z()).collect(),
        mean_clipped: mean_of(&updates, protocol.dim),
        model_before: model.w.clone(),
        payloads: messages.iter().map(|m| m.masked.payload.clone()).collect(),
        clamped: messages.iter().map(|m| m.clamped).sum(),
        wall_time: None,
    };
    Ok((GlobalModel { w, t: round }, transcript))
}

pub(crate) fn mean_of(updates: &[ClippedUpdate], dim: usize) -> Vec<f64> {
    let mut mean = alloc::vec![0.0; dim];
    for u in updates {
        mean.iter_mut().zip(u.values()).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / updates.len().max(1) as f64;
    mean.iter_mut().for_each(|a| *a *= inv);
    mean
}

/// Per-round scalars for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub epsilon: f64,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub bytes_per_client: usize,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub model: GlobalModel,
    pub transcripts: Vec<RoundTranscript>,
    pub metrics: Vec<RoundMetrics>,
    pub accountant: AccountantState,
    pub resolved: Resolved,
}

/// Runs `cfg.rounds` rounds from the task's initial parameters.
pub fn run_training<E: ClientExecutor>(task: &Task, cfg: &RoundConfig, exec: &E) -> Result<TrainingOutcome> {
    run_training_with(task, cfg, exec, |_| {})
}

/// As [`run_training`], calling `on_round` after each round (for timing).
pub fn run_training_with<E: ClientExecutor>(
    task: &Task,
    cfg: &RoundConfig,
    exec: &E,
    mut on_round: impl FnMut(&mut RoundTranscript),
) -> Result<TrainingOutcome> {
    let resolved = cfg.resolve(task.param_count())?;
    let mut accountant = resolved.accountant(cfg.gamma)?;
    let mut model = GlobalModel {
        w: task.init_params(derive_seed(cfg.seed, Purpose::Init, 0, 0)),
        t: 0,
    };
    let mut transcripts = Vec::with_capacity(cfg.rounds as usize);
    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let (next, mut transcript) = run_round(&model, task, cfg, &resolved, exec)?;
        on_round(&mut transcript);
        accountant.record_round();
        metrics.push(RoundMetrics {
            round: next.t,
            epsilon: accountant.epsilon(cfg.delta)?.0,
            loss: task.loss(&next.w, task.test()),
            accuracy: task.accuracy(&next.w),
            bytes_per_client: transcript.bytes_per_client.first().copied().unwrap_or(0),
            squared_error: transcript.squared_error(),
        });
        transcripts.push(transcript);
        model = next;
    }
    Ok(TrainingOutcome {
        model,
        transcripts,
        metrics,
        accountant,
        resolved,
    })
}

/// Plain centralized minibatch SGD on the pooled training set, `epochs` passes.
pub fn centralized_sgd(task: &Task, epochs: u32, batch_size: usize, lr: f64, seed: u64) -> Vec<f64> {
    let mut w = task.init_params(derive_seed(seed, Purpose::Init, 0, 0));
    let mut order: Vec<usize> = (0..task.train().len()).collect();
    let mut rng = stream(seed, Purpose::LocalTraining, u64::MAX, 0);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let (_, g) = task.loss_and_grad(&w, task.train(), chunk);
            w.iter_mut().zip(&g).for_each(|(x, gi)| *x -= lr * gi);
        }
    }
    w
}
