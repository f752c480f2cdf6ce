//! Closed-form error and communication bounds, and the Monte-Carlo estimate
//! they are checked against.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::compressor::{clip, l2_norm, ClippedUpdate};
use crate::error::{invalid, Error, Result};
use crate::fed_sim::pipeline::{aggregate_round, Protocol};
use crate::fed_sim::mean_of;
use crate::rng::{derive_seed, stream, Purpose};
use crate::special::{ceil_log2, normal_sf};

/// Fixed per-client overhead (ids and seeds), not part of the payload bound.
pub const HEADER_BITS: u64 = 128;

/// Symbols of the MSE bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBoundInputs {
    /// Dimension the noise and quantization act on (the padded dimension).
    pub d: usize,
    /// Contributing clients.
    pub n: u32,
    pub k: u32,
    pub q: u64,
    /// Noise standard deviation in lattice units.
    pub sigma: f64,
    pub gamma: f64,
    pub g_max: f64,
}

/// How the normal-CDF arguments of the wrap-around terms are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailReading {
    /// `Φ(nq)` and `Φ(n(q-k-1))` as written.
    Literal,
    /// Both arguments divided by `σ`.
    NoiseScaled,
    /// The larger of the two resulting bounds.
    #[default]
    Conservative,
}

/// Smallest admissible `σ` (lattice units): `1/√(2π)`.
pub fn min_sigma() -> f64 {
    1.0 / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// `(1 - c·(1-Φ(x₁)))·(4d·g²/(n(k-1)²))·(1/4 + σ²/(γ²n²)) + (1-Φ(x₂))·q²`
/// with `c = 1/(1+3e^{-2π²σ²})`, `x₁ = nq`, `x₂ = n(q-k-1)`.
pub fn mse_bound(inputs: &MseBoundInputs, reading: TailReading) -> Result<f64> {
    let MseBoundInputs { d, n, k, q, sigma, gamma, g_max } = *inputs;
    if d == 0 || n == 0 || k < 2 || q == 0 || !(gamma > 0.0) || !(g_max > 0.0) {
        return Err(invalid("MSE bound inputs must be positive with k ≥ 2"));
    }
    if !(sigma >= min_sigma()) {
        return Err(Error::HypothesisViolated(alloc::format!(
            "sigma = {sigma} is below 1/sqrt(2 pi) lattice units"
        )));
    }
    let (n_f, q_f, k_f) = (f64::from(n), q as f64, f64::from(k));
    let x1 = n_f * q_f;
    let x2 = n_f * (q_f - k_f - 1.0);
    match reading {
        TailReading::Literal => Ok(evaluate(inputs, x1, x2)),
        TailReading::NoiseScaled => Ok(evaluate(inputs, x1 / sigma, x2 / sigma)),
        TailReading::Conservative => {
            Ok(evaluate(inputs, x1, x2).max(evaluate(inputs, x1 / sigma, x2 / sigma)))
        }
    }
}

fn evaluate(inputs: &MseBoundInputs, x1: f64, x2: f64) -> f64 {
    let MseBoundInputs { d, n, k, q, sigma, gamma, g_max } = *inputs;
    let n_f = f64::from(n);
    let c = 1.0 / (1.0 + 3.0 * libm::exp(-2.0 * core::f64::consts::PI * core::f64::consts::PI * sigma * sigma));
    let km1 = f64::from(k - 1);
    let dominant = 4.0 * d as f64 * g_max * g_max / (n_f * km1 * km1)
        * (0.25 + sigma * sigma / (gamma * gamma * n_f * n_f));
    let q_f = q as f64;
    (1.0 - c * normal_sf(x1)) * dominant + normal_sf(x2) * q_f * q_f
}

/// Per-round communication of one aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommCost {
    pub participants: u64,
    pub bits_per_coordinate: u32,
    pub payload_bits_per_client: u64,
}

impl CommCost {
    /// Payload bits summed over clients, without headers.
    pub fn payload_bits(&self) -> u64 {
        self.participants * self.payload_bits_per_client
    }

    pub fn total_bits(&self) -> u64 {
        self.participants * (self.payload_bits_per_client + HEADER_BITS)
    }

    /// Bytes on the wire per client, payload only.
    pub fn payload_bytes_per_client(&self) -> usize {
        self.payload_bits_per_client.div_ceil(8) as usize
    }
}

/// `n·d·⌈log₂(n·q_wire + 1)⌉` payload bits, where `q_wire` is the per-client
/// group size in fine units.
pub fn comm_cost(participants: u64, d_pad: usize, q_wire: u64) -> Result<CommCost> {
    if participants == 0 || d_pad == 0 || q_wire == 0 {
        return Err(invalid("communication cost inputs must be positive"));
    }
    let bits = ceil_log2(u128::from(participants) * u128::from(q_wire) + 1);
    Ok(CommCost {
        participants,
        bits_per_coordinate: bits,
        payload_bits_per_client: d_pad as u64 * u64::from(bits),
    })
}

/// `participants` independent uniformly random unit vectors of length `dim`.
pub fn random_unit_updates(participants: u32, dim: usize, seed: u64) -> Vec<ClippedUpdate> {
    let mut rng = stream(seed, Purpose::Trial, u64::MAX, 0);
    (0..participants)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = l2_norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            clip(&v, 1.0).expect("unit clip bound is positive")
        })
        .collect()
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub trials: usize,
    pub mean: f64,
    pub std_error: f64,
}

impl MseEstimate {
    /// Summarizes per-trial squared errors, summed in index order.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("at least one trial is required"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            trials: samples.len(),
            mean,
            std_error: libm::sqrt(var / n),
        })
    }
}

/// Squared error `‖g̃ - ḡ‖²` of one pipeline run, with randomness keyed by
/// `(seed, trial)`.
pub fn mse_trial(protocol: &Protocol, updates: &[ClippedUpdate], seed: u64, trial: u64) -> Result<f64> {
    let ids: Vec<u32> = (0..updates.len() as u32).collect();
    let round_seed = derive_seed(seed, Purpose::Trial, trial, 0);
    let (_, _, recovered) = aggregate_round(protocol, round_seed, &ids, updates)?;
    let target = mean_of(updates, protocol.dim);
    Ok(recovered.mean.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Runs the aggregation `trials` times on fixed clipped updates (one per
/// participant) with fresh rotation, quantization, noise and masks.
pub fn empirical_mse(trials: usize, protocol: &Protocol, updates: &[ClippedUpdate], seed: u64) -> Result<MseEstimate> {
    if updates.len() != protocol.spec.split_denominator() as usize {
        return Err(invalid("need exactly one update per participant"));
    }
    let samples = (0..trials as u64)
        .map(|t| mse_trial(protocol, updates, seed, t))
        .collect::<Result<Vec<_>>>()?;
    MseEstimate::from_samples(&samples)
}
