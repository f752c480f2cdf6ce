//! The discrete Gaussian `N_𝕃(σ)` on `step·ℤ`: mass at `x` proportional to
//! `exp(-x²/(2σ²))`.
//!
//! Sampling is exact rejection from a two-sided discrete Laplace proposal on
//! `ℤ` (scale `t = ⌊σ'⌋ + 1`, with `σ' = σ/step`), accepted with probability
//! `exp(-(|y| - σ'²/t)²/(2σ'²))`. All series (normalizer, Rényi divergence)
//! are summed in log space from the mode outward, over at least `|z| ≤ ⌈20σ'⌉`
//! and until the next term is below `1e-20` of the running sum.

use core::f64::consts::PI;

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::special::{normal_sf, truncated_log_sum};

/// Proposals rejected before a sample is declared stalled.
pub const MAX_REJECTIONS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteGaussian {
    sigma: f64,
    step: f64,
    log_normalizer: f64,
}

impl DiscreteGaussian {
    /// Noise of real scale `sigma` on the lattice of `spec`.
    pub fn new(sigma: f64, spec: &LatticeSpec) -> Result<Self> {
        Self::with_step(sigma, spec.step())
    }

    /// Noise on the integers with scale `sigma_units`.
    pub fn on_integers(sigma_units: f64) -> Result<Self> {
        Self::with_step(sigma_units, 1.0)
    }

    pub fn with_step(sigma: f64, step: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma must be positive and finite"));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid("lattice step must be positive and finite"));
        }
        let r = sigma / step;
        let s2 = r * r;
        let log_normalizer = truncated_log_sum(0.0, min_radius(sigma / step), |z| {
            -((z * z) as f64) / (2.0 * s2)
        });
        Ok(Self {
            sigma,
            step,
            log_normalizer,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `σ' = σ/step`, the scale in lattice units.
    pub fn sigma_units(&self) -> f64 {
        self.sigma / self.step
    }

    fn s2(&self) -> f64 {
        let s = self.sigma_units();
        s * s
    }

    pub fn log_pmf(&self, z: i64) -> f64 {
        let zf = z as f64;
        -zf * zf / (2.0 * self.s2()) - self.log_normalizer
    }

    pub fn pmf(&self, z: i64) -> f64 {
        libm::exp(self.log_pmf(z))
    }

    /// Draws one lattice point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatticePoint> {
        let sigma = self.sigma_units();
        let s2 = self.s2();
        let t = libm::floor(sigma) + 1.0;
        let offset = s2 / t;
        for _ in 0..MAX_REJECTIONS {
            let y = sample_discrete_laplace(t, rng);
            let gap = (y.unsigned_abs() as f64) - offset;
            let accept = libm::exp(-gap * gap / (2.0 * s2));
            if rng.random::<f64>() < accept {
                return Ok(LatticePoint(y));
            }
        }
        Err(Error::SamplerStall {
            sigma: self.sigma,
            iterations: MAX_REJECTIONS,
        })
    }

    /// Draws `len` independent lattice points.
    pub fn sample_vec<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Vec<LatticePoint>> {
        (0..len).map(|_| self.sample(rng)).collect()
    }

    /// An upper bound on the variance, in real units.
    ///
    /// `σ'²(1 - 4π²σ'²/(e^{4π²σ'²} - 1))`, tightened to `3e^{-1/(2σ'²)}` when
    /// `σ'² ≤ 1/3`; both scaled by `step²`.
    pub fn variance_upper_bound(&self) -> f64 {
        let s2 = self.s2();
        let x = 4.0 * PI * PI * s2;
        let mut bound = s2 * (1.0 - x / libm::expm1(x));
        if s2 <= 1.0 / 3.0 {
            bound = bound.min(3.0 * libm::exp(-1.0 / (2.0 * s2)));
        }
        bound * self.step * self.step
    }

    /// Bounds on `P[Z ≥ m]` for `Z` in lattice units.
    ///
    /// `upper = P[N(0,σ'²) ≥ m-1]`; `lower = P[N(0,σ'²) ≥ m]/(1 + 3e^{-2π²σ'²})`
    /// when `σ' ≥ 1/√(2π)`, else zero.
    pub fn tail_bound(&self, m: i64) -> Result<TailBound> {
        if m < 1 {
            return Err(invalid("tail index m must be at least 1"));
        }
        let sigma = self.sigma_units();
        let upper = normal_sf((m - 1) as f64 / sigma);
        let lower = if sigma >= 1.0 / libm::sqrt(2.0 * PI) {
            normal_sf(m as f64 / sigma) / (1.0 + 3.0 * libm::exp(-2.0 * PI * PI * self.s2()))
        } else {
            0.0
        };
        Ok(TailBound { upper, lower })
    }

    /// `D_α(N_𝕃(0) ‖ N_𝕃(μ·step))` by truncated summation.
    pub fn renyi_divergence(&self, mu: i64, alpha: f64) -> Result<f64> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(invalid("Rényi order alpha must be finite and > 1"));
        }
        if mu == 0 {
            return Ok(0.0);
        }
        let s2 = self.s2();
        let muf = mu as f64;
        // α·ln P(x) + (1-α)·ln Q(x); the normalizers are equal and factor out.
        let log_term = |x: i64| {
            let xf = x as f64;
            let d = xf - muf;
            -(alpha * xf * xf + (1.0 - alpha) * d * d) / (2.0 * s2)
        };
        let center = (1.0 - alpha) * muf;
        let log_sum = truncated_log_sum(center, min_radius(self.sigma_units()), log_term);
        Ok((log_sum - self.log_normalizer) / (alpha - 1.0))
    }
}

/// Result of [`DiscreteGaussian::tail_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub upper: f64,
    pub lower: f64,
}

fn min_radius(sigma_units: f64) -> i64 {
    libm::ceil(20.0 * sigma_units) as i64
}

/// Two-sided geometric on `ℤ` with mass proportional to `exp(-|y|/t)`.
fn sample_discrete_laplace<R: Rng + ?Sized>(t: f64, rng: &mut R) -> i64 {
    loop {
        // P[G ≥ g] = exp(-g/t)
        let u = 1.0 - rng.random::<f64>();
        let g = libm::floor(-t * libm::log(u)) as i64;
        let negative = rng.random::<bool>();
        if negative && g == 0 {
            continue;
        }
        return if negative { -g } else { g };
    }
}
