//! Empirical evaluation of the non-convex convergence bound from recorded
//! single-step rounds.

use alloc::vec::Vec;

use super::tasks::GradientOracle;
use super::{LocalTrainerSpec, RoundTranscript};
use crate::error::{invalid, Result};

/// User-supplied constants of the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessInputs {
    /// Smoothness constant `L` of `F`.
    pub smoothness: f64,
    /// Multiplier `ρ` of the bias term.
    pub rho: f64,
    /// Initial suboptimality `ρ_F ≥ F(w₀) - F*`.
    pub rho_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub rounds: usize,
    pub lambda_sq: f64,
    /// `max_t ‖g_t - g̃_t‖`.
    pub bias: f64,
    /// `2ρ_F·L/T + 2√2·λ·√(L·ρ_F)/√T + ρ·B`.
    pub bound: f64,
    /// Mean of `‖∇F(w_t)‖²` over the recorded rounds.
    pub mean_grad_norm_sq: f64,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the report. With single-step local training the clipped mean
/// update is `-lr·g_t` and the applied aggregate is `-lr·g̃_t`.
pub fn convergence_report(
    transcripts: &[RoundTranscript],
    oracle: &dyn GradientOracle,
    local: &LocalTrainerSpec,
    inputs: SmoothnessInputs,
) -> Result<ConvergenceReport> {
    if !local.is_single_step() {
        return Err(invalid("the convergence report needs one full-batch step per round"));
    }
    if transcripts.is_empty() {
        return Err(invalid("no rounds recorded"));
    }
    let lr = local.lr;
    let (mut stoch, mut bias_sq, mut grad_sq) = (0.0f64, 0.0f64, 0.0);
    for t in transcripts {
        let full = oracle
            .full_gradient(&t.model_before)
            .ok_or_else(|| invalid("task has no gradient oracle"))?;
        let g: Vec<f64> = t.mean_clipped.iter().map(|x| -x / lr).collect();
        let g_tilde: Vec<f64> = t.aggregate.iter().map(|x| -x / lr).collect();
        stoch = stoch.max(dist_sq(&g, &full));
        bias_sq = bias_sq.max(dist_sq(&g, &g_tilde));
        grad_sq += full.iter().map(|x| x * x).sum::<f64>();
    }
    let rounds = transcripts.len();
    let big_t = rounds as f64;
    let lambda_sq = 2.0 * stoch + 2.0 * bias_sq;
    let bias = libm::sqrt(bias_sq);
    let SmoothnessInputs { smoothness, rho, rho_f } = inputs;
    let bound = 2.0 * rho_f * smoothness / big_t
        + 2.0 * core::f64::consts::SQRT_2 * libm::sqrt(lambda_sq) * libm::sqrt(smoothness * rho_f) / libm::sqrt(big_t)
        + rho * bias;
    Ok(ConvergenceReport {
        rounds,
        lambda_sq,
        bias,
        bound,
        mean_grad_norm_sq: grad_sq / big_t,
    })
}
