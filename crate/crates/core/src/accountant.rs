//! Rényi DP accounting for the discrete Gaussian aggregate.
//!
//! A round releases `Σ quantized + ν` with `ν ~ N_𝕃(σ)`, which is
//! `(α, α·Δ²/(2σ²))`-RDP for sensitivity `Δ`. Subsampling a `γ` fraction of
//! clients without replacement amplifies each integer order by
//!
//! ```text
//! ε'(α) = 1/(α-1) · ln(1 + γ²·C(α,2)·min{4(e^{ε(2)}-1), 2e^{ε(2)}}
//!                        + Σ_{j=3..α} 2·γʲ·C(α,j)·e^{(j-1)ε(j)})
//! ```
//!
//! evaluated in log space. Rounds compose additively and the cumulative curve is
//! converted to `(ε, δ)` by minimizing `ε(α) + ln(1/δ)/(α-1)` over the grid.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::special::{ln_expm1, log_sum_exp};

/// Largest integer order on the default grid.
pub const MAX_ORDER: u32 = 256;

/// The default order grid: a few points in `(1, 2)` and every integer in `[2, 256]`.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid = alloc::vec![1.001, 1.01, 1.1, 1.25, 1.5, 1.75];
    grid.extend((2..=MAX_ORDER).map(f64::from));
    grid
}

/// `ε(α)` tabulated on an increasing grid of orders `α > 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    alphas: Vec<f64>,
    eps: Vec<f64>,
}

impl RdpCurve {
    pub fn new(alphas: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != eps.len() {
            return Err(invalid("curve needs equally many orders and values"));
        }
        if alphas.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(invalid("orders must be finite and > 1"));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("orders must be strictly increasing"));
        }
        if eps.iter().any(|&e| e.is_nan() || e < 0.0) {
            return Err(invalid("RDP values must be non-negative"));
        }
        Ok(Self { alphas, eps })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.alphas.iter().copied().zip(self.eps.iter().copied())
    }

    /// Value at an exact grid order.
    pub fn at(&self, alpha: f64) -> Option<f64> {
        self.alphas
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.eps[i])
    }

    fn zeros_like(&self) -> Self {
        Self {
            alphas: self.alphas.clone(),
            eps: alloc::vec![0.0; self.alphas.len()],
        }
    }

    /// Pointwise `rounds × ε(α)`.
    pub fn scaled(&self, rounds: u64) -> Self {
        if rounds == 0 {
            return self.zeros_like();
        }
        let r = rounds as f64;
        Self {
            alphas: self.alphas.clone(),
            eps: self.eps.iter().map(|e| e * r).collect(),
        }
    }
}

/// `ε(α) = α·Δ²/(2σ²)` on the default grid.
pub fn base_curve(sigma: f64, sensitivity: f64) -> Result<RdpCurve> {
    base_curve_on(default_alpha_grid(), sigma, sensitivity)
}

pub fn base_curve_on(alphas: Vec<f64>, sigma: f64, sensitivity: f64) -> Result<RdpCurve> {
    if !(sigma > 0.0) || !(sensitivity > 0.0) {
        return Err(invalid("sigma and sensitivity must be positive"));
    }
    let c = sensitivity * sensitivity / (2.0 * sigma * sigma);
    let eps = alphas.iter().map(|a| a * c).collect();
    RdpCurve::new(alphas, eps)
}

/// Applies subsampling amplification at rate `gamma`.
///
/// The input must be tabulated at every integer order from 2 to `⌈max α⌉`.
/// Fractional orders take the bound of the next integer above them, which is
/// sound since RDP is non-decreasing in `α`. Each value is also capped by the
/// unamplified `ε(α)`, and the result is made monotone by a suffix minimum.
pub fn amplify_by_subsampling(curve: &RdpCurve, gamma: f64) -> Result<RdpCurve> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("sampling rate gamma must lie in (0, 1]"));
    }
    if gamma == 1.0 {
        return Ok(curve.clone());
    }
    let max_order = libm::ceil(curve.alphas.last().copied().unwrap_or(2.0)).max(2.0) as u32;
    let mut at_int = alloc::vec![0.0; max_order as usize + 1];
    for j in 2..=max_order {
        at_int[j as usize] = curve.at(f64::from(j)).ok_or_else(|| {
            invalid(alloc::format!("curve lacks the integer order {j} needed for amplification"))
        })?;
    }
    let amplified_int: Vec<f64> = (0..=max_order)
        .map(|a| {
            if a < 2 {
                0.0
            } else {
                amplified_order(&at_int, a, gamma)
            }
        })
        .collect();

    let mut eps: Vec<f64> = curve
        .iter()
        .map(|(alpha, e)| {
            let a = (libm::ceil(alpha) as u32).max(2);
            amplified_int[a as usize].min(e)
        })
        .collect();
    for i in (0..eps.len().saturating_sub(1)).rev() {
        eps[i] = eps[i].min(eps[i + 1]);
    }
    RdpCurve::new(curve.alphas.clone(), eps)
}

fn amplified_order(eps: &[f64], alpha: u32, gamma: f64) -> f64 {
    let ln_gamma = libm::log(gamma);
    let a = f64::from(alpha);
    let e2 = eps[2];
    // min{4(e^{ε(2)} - 1), 2e^{ε(2)}}; ε(2) = 0 makes the first branch vanish.
    let second = if e2 > 0.0 {
        (libm::log(4f64) + ln_expm1(e2)).min(libm::log(2f64) + e2)
    } else {
        f64::NEG_INFINITY
    };
    let mut terms = Vec::with_capacity(alpha as usize);
    terms.push(0.0);
    let mut ln_binom = libm::log(a * (a - 1.0) / 2.0);
    terms.push(2.0 * ln_gamma + ln_binom + second);
    for j in 3..=alpha {
        let jf = f64::from(j);
        ln_binom += libm::log(a - jf + 1.0) - libm::log(jf);
        terms.push(libm::log(2f64) + jf * ln_gamma + ln_binom + (jf - 1.0) * eps[j as usize]);
    }
    log_sum_exp(&terms) / (a - 1.0)
}

/// Adaptive composition of `rounds` identical rounds.
pub fn compose(state: &AccountantState, rounds: u64) -> RdpCurve {
    state.per_round.scaled(rounds)
}

/// Converts an RDP curve to `(ε, δ)`: returns `(ε, α*)`.
///
/// An identically zero curve (nothing released) converts to `ε = 0`, reported at
/// the largest grid order.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    let last = *curve.alphas.last().expect("curves are non-empty");
    if curve.eps.iter().all(|&e| e == 0.0) {
        return Ok((0.0, last));
    }
    let log_inv_delta = libm::log(1.0 / delta);
    let mut best = (f64::INFINITY, last);
    for (alpha, e) in curve.iter() {
        let candidate = e + log_inv_delta / (alpha - 1.0);
        if candidate < best.0 {
            best = (candidate, alpha);
        }
    }
    Ok(best)
}

/// Running privacy ledger for homogeneous rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountantState {
    per_round: RdpCurve,
    cumulative: RdpCurve,
    rounds_recorded: u64,
    gamma: f64,
    sigma: f64,
    sensitivity: f64,
}

impl AccountantState {
    /// Ledger for rounds adding `N_𝕃(σ)` to a sum of sensitivity `Δ`, with a
    /// `gamma` fraction of clients per round. `sigma = 0` means no noise: every
    /// released round costs `ε = ∞`.
    pub fn new(sigma: f64, sensitivity: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid("sampling rate gamma must lie in (0, 1]"));
        }
        if sigma < 0.0 || sigma.is_nan() {
            return Err(invalid("sigma must be non-negative"));
        }
        let per_round = if sigma == 0.0 {
            let alphas = default_alpha_grid();
            let eps = alloc::vec![f64::INFINITY; alphas.len()];
            RdpCurve { alphas, eps }
        } else {
            amplify_by_subsampling(&base_curve(sigma, sensitivity)?, gamma)?
        };
        let cumulative = per_round.zeros_like();
        Ok(Self {
            per_round,
            cumulative,
            rounds_recorded: 0,
            gamma,
            sigma,
            sensitivity,
        })
    }

    pub fn record_round(&mut self) {
        self.record_rounds(1);
    }

    pub fn record_rounds(&mut self, rounds: u64) {
        self.rounds_recorded += rounds;
        self.cumulative = compose(self, self.rounds_recorded);
    }

    pub fn per_round(&self) -> &RdpCurve {
        &self.per_round
    }

    pub fn cumulative(&self) -> &RdpCurve {
        &self.cumulative
    }

    pub fn rounds_recorded(&self) -> u64 {
        self.rounds_recorded
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// `(ε, α*)` of the cumulative ledger.
    pub fn epsilon(&self, delta: f64) -> Result<(f64, f64)> {
        to_dp(&self.cumulative, delta)
    }
}

/// Smallest noise multiplier `σ/Δ` (to a relative precision of `1e-6`) whose
/// `rounds`-fold composition at rate `gamma` stays within `target_epsilon`.
pub fn calibrate_noise_multiplier(
    target_epsilon: f64,
    delta: f64,
    gamma: f64,
    rounds: u64,
) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(invalid("target epsilon must be positive"));
    }
    let eps_at = |z: f64| -> Result<f64> {
        let mut state = AccountantState::new(z, 1.0, gamma)?;
        state.record_rounds(rounds);
        Ok(state.epsilon(delta)?.0)
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    while eps_at(hi)? > target_epsilon {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(invalid("target epsilon unreachable"));
        }
    }
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
