//! Client-side compression: ℓ₂ clipping, seeded randomized Hadamard rotation,
//! ℓ∞ clamping and stochastic `k`-level quantization.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::rng::{stream, Purpose};

/// An update after ℓ₂ clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedUpdate(Vec<f64>);

impl ClippedUpdate {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A rotated (and zero-padded) update of length `d_pad`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedUpdate {
    values: Vec<f64>,
    dim: usize,
}

impl RotatedUpdate {
    /// Wraps already rotated coordinates; `values.len()` must be a power of
    /// two no smaller than `dim`.
    pub fn from_padded(values: Vec<f64>, dim: usize) -> Result<Self> {
        if !values.len().is_power_of_two() || dim > values.len() {
            return Err(invalid("padded values must have power-of-two length ≥ dim"));
        }
        Ok(Self { values, dim })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Dimension before padding.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.values.len()
    }
}

/// Stochastically quantized coordinates, stored as level indices `r ∈ [0, k)`
/// of the grid `b[r] = -g_max + r·step`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate {
    levels: Vec<u32>,
    spec: LatticeSpec,
}

impl QuantizedUpdate {
    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Real coordinates `b[r]`.
    pub fn values(&self) -> Vec<f64> {
        let step = self.spec.step();
        let g = self.spec.g_max();
        self.levels.iter().map(|&r| -g + f64::from(r) * step).collect()
    }

    /// Coordinates in fine units of `step / fine_scale`.
    pub fn to_fine(&self) -> Vec<i64> {
        let k = i64::from(self.spec.k());
        let f = self.spec.fine_scale();
        self.levels
            .iter()
            .map(|&r| (2 * i64::from(r) - (k - 1)) * f / 2)
            .collect()
    }

    /// Coordinates as whole lattice points; only defined for odd `k`, where the
    /// grid `b[r]` is a subset of `step·ℤ`.
    pub fn lattice_points(&self) -> Result<Vec<LatticePoint>> {
        if self.spec.k().is_multiple_of(2) {
            return Err(invalid("an even level count puts the grid at half steps"));
        }
        let half = i64::from((self.spec.k() - 1) / 2);
        Ok(self
            .levels
            .iter()
            .map(|&r| LatticePoint(i64::from(r) - half))
            .collect())
    }
}

/// Seed `s` of the shared rotation and the padded dimension it acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationSeed {
    seed: u64,
    d_pad: usize,
}

impl RotationSeed {
    /// Rotation for vectors of length `dim`, padded to the next power of two.
    pub fn for_dim(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            d_pad: dim.max(1).next_power_of_two(),
        }
    }

    pub fn with_padded_dim(seed: u64, d_pad: usize) -> Result<Self> {
        if !d_pad.is_power_of_two() {
            return Err(invalid("padded dimension must be a power of two"));
        }
        Ok(Self { seed, d_pad })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn padded_dim(&self) -> usize {
        self.d_pad
    }

    fn signs(&self) -> Vec<f64> {
        let mut rng = stream(self.seed, Purpose::Rotation, self.d_pad as u64, 0);
        (0..self.d_pad)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect()
    }
}

/// `g / max(1, ‖g‖₂/D)`.
pub fn clip(g: &[f64], bound: f64) -> Result<ClippedUpdate> {
    if !(bound > 0.0) {
        return Err(invalid("clip bound D must be positive"));
    }
    let norm = l2_norm(g);
    if norm <= bound {
        return Ok(ClippedUpdate(g.to_vec()));
    }
    let scale = norm / bound;
    Ok(ClippedUpdate(g.iter().map(|x| x / scale).collect()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

/// In-place unnormalized Walsh–Hadamard transform; `v.len()` must be a power of two.
pub fn fwht(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// `R·g` with `R = H·Diag(ξ)/√d_pad`, after zero-padding `g` to `d_pad`.
pub fn rotate(g: &ClippedUpdate, rs: &RotationSeed) -> Result<RotatedUpdate> {
    rotate_slice(g.values(), rs)
}

pub fn rotate_slice(g: &[f64], rs: &RotationSeed) -> Result<RotatedUpdate> {
    if !rs.d_pad.is_power_of_two() {
        return Err(invalid("padded dimension must be a power of two"));
    }
    if g.len() > rs.d_pad {
        return Err(invalid("vector longer than the padded rotation dimension"));
    }
    let mut v = alloc::vec![0.0; rs.d_pad];
    v[..g.len()].copy_from_slice(g);
    for (x, s) in v.iter_mut().zip(rs.signs()) {
        *x *= s;
    }
    fwht(&mut v);
    let scale = 1.0 / libm::sqrt(rs.d_pad as f64);
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(RotatedUpdate {
        values: v,
        dim: g.len(),
    })
}

/// Inverse of [`rotate`]: `Diag(ξ)·H·v/√d_pad`, truncated to the first `dim`
/// coordinates.
pub fn unrotate(v: &[f64], dim: usize, rs: &RotationSeed) -> Result<Vec<f64>> {
    if v.len() != rs.d_pad || dim > rs.d_pad {
        return Err(invalid("unrotate needs a vector of the padded dimension"));
    }
    let mut w = v.to_vec();
    fwht(&mut w);
    let scale = 1.0 / libm::sqrt(rs.d_pad as f64);
    for (x, s) in w.iter_mut().zip(rs.signs()) {
        *x *= s * scale;
    }
    w.truncate(dim);
    Ok(w)
}

/// Clamps every coordinate to `[-g_max, g_max]`; returns how many changed.
pub fn clamp_linf(v: &mut RotatedUpdate, g_max: f64) -> usize {
    let mut clamped = 0;
    for x in &mut v.values {
        if x.abs() > g_max {
            *x = x.signum() * g_max;
            clamped += 1;
        }
    }
    clamped
}

/// Rounds each coordinate to a neighbouring level of `b[r] = -g_max + r·step`,
/// upward with probability `(x - b[r])/step`, so that `E[b] = x`.
///
/// Coordinates are clamped to `[-g_max, g_max]` first.
pub fn quantize<R: Rng + ?Sized>(v: &RotatedUpdate, spec: &LatticeSpec, rng: &mut R) -> QuantizedUpdate {
    let g = spec.g_max();
    let step = spec.step();
    let top = spec.k() - 1;
    let levels = v
        .values
        .iter()
        .map(|&x| {
            let pos = (x.clamp(-g, g) + g) / step;
            let r = (libm::floor(pos) as u32).min(top - 1);
            let frac = pos - f64::from(r);
            if rng.random::<f64>() < frac {
                r + 1
            } else {
                r
            }
        })
        .collect();
    QuantizedUpdate {
        levels,
        spec: *spec,
    }
}

/// ℓ₂ sensitivity of the quantized sum: `2·(D + √d·D/(k-1))`.
pub fn sensitivity(clip_bound: f64, dim: usize, k: u32) -> Result<f64> {
    if k < 2 || dim == 0 || !(clip_bound > 0.0) {
        return Err(invalid("sensitivity needs k ≥ 2, d ≥ 1 and D > 0"));
    }
    let d = dim as f64;
    Ok(2.0 * (clip_bound + libm::sqrt(d) * clip_bound / f64::from(k - 1)))
}

/// Coordinate bound after rotation that holds with probability `1 - delta`
/// over `participants × d_pad` coordinates: `2·√(ln(2nd/δ))·D/√d_pad`.
pub fn default_g_max(participants: usize, d_pad: usize, clip_bound: f64, delta: f64) -> f64 {
    let nd = (participants.max(1) * d_pad) as f64;
    2.0 * libm::sqrt(libm::log(2.0 * nd / delta)) * clip_bound / libm::sqrt(d_pad as f64)
}
