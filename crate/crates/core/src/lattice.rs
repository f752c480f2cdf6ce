//! The quantization lattice `step·ℤ`, its centered modular wrap and the
//! integer codec.
//!
//! Values that travel through the protocol are integers. Coarse lattice points
//! count whole steps; protocol payloads count *fine units* of
//! `step / fine_scale`, where `fine_scale` is the noise split denominator
//! (doubled when `k` is even, so that the half-step quantizer grid is integral).


use crate::error::{invalid, Error, Result};

/// Relative tolerance for [`encode`].
pub const ENCODE_TOLERANCE: f64 = 1e-9;

/// Largest magnitude any protocol integer (including an `m`-fold payload sum)
/// may reach.
pub const INTEGER_LIMIT: i128 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    g_max: f64,
    k: u32,
    q: u64,
    split_denominator: u32,
}

impl LatticeSpec {
    /// Builds a lattice description.
    ///
    /// `q` must be odd, `k ≥ 2`, `g_max > 0` and `split_denominator ≥ 1`. The
    /// widest integer the protocol forms, `m · (m·q·fine_scale)`, must fit in
    /// [`INTEGER_LIMIT`].
    pub fn new(g_max: f64, k: u32, q: u64, split_denominator: u32) -> Result<Self> {
        if !(g_max.is_finite() && g_max > 0.0) {
            return Err(invalid("g_max must be positive and finite"));
        }
        if k < 2 {
            return Err(invalid("quantization level count k must be at least 2"));
        }
        if q.is_multiple_of(2) {
            return Err(invalid("modulus q must be odd"));
        }
        if split_denominator == 0 {
            return Err(invalid("split denominator must be at least 1"));
        }
        let spec = Self {
            g_max,
            k,
            q,
            split_denominator,
        };
        let m = i128::from(split_denominator);
        let widest = m * m * i128::from(q) * i128::from(spec.fine_scale());
        if widest >= INTEGER_LIMIT {
            return Err(invalid("lattice parameters overflow 64-bit protocol integers"));
        }
        Ok(spec)
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn split_denominator(&self) -> u32 {
        self.split_denominator
    }

    /// Lattice spacing `2·g_max/(k-1)`.
    pub fn step(&self) -> f64 {
        2.0 * self.g_max / f64::from(self.k - 1)
    }

    /// Fine units per lattice step.
    pub fn fine_scale(&self) -> i64 {
        let parity = if self.k.is_multiple_of(2) { 2 } else { 1 };
        i64::from(self.split_denominator) * parity
    }

    /// Real value of one fine unit.
    pub fn fine_unit(&self) -> f64 {
        self.step() / self.fine_scale() as f64
    }

    /// Same lattice with a different noise split denominator.
    pub fn with_split_denominator(&self, m: u32) -> Result<Self> {
        Self::new(self.g_max, self.k, self.q, m)
    }

    /// `(q-1)/2`, the largest magnitude in `𝕃_q` in lattice units.
    pub fn half_range(&self) -> i64 {
        ((self.q - 1) / 2) as i64
    }
}

/// A point `z·step` of the lattice, stored as the integer `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LatticePoint(pub i64);

impl LatticePoint {
    pub fn z(self) -> i64 {
        self.0
    }

    /// Embeds the point into fine units.
    pub fn to_fine(self, spec: &LatticeSpec) -> i64 {
        self.0 * spec.fine_scale()
    }
}

/// Centered residue of `z` modulo an odd `modulus`, in `[-(modulus-1)/2, (modulus-1)/2]`.
pub fn wrap_centered(z: i64, modulus: u64) -> i64 {
    debug_assert!(modulus % 2 == 1);
    let m = i128::from(modulus);
    let half = (m - 1) / 2;
    ((i128::from(z) + half).rem_euclid(m) - half) as i64
}

/// The wrap `φ_q` onto `𝕃_q`.
pub fn phi_q(x: LatticePoint, spec: &LatticeSpec) -> LatticePoint {
    LatticePoint(wrap_centered(x.0, spec.q))
}

pub fn phi_q_vec(v: &[LatticePoint], spec: &LatticeSpec) -> alloc::vec::Vec<LatticePoint> {
    v.iter().map(|&x| phi_q(x, spec)).collect()
}

/// Maps a real lattice multiple to its integer coordinate.
pub fn encode(x: f64, spec: &LatticeSpec) -> Result<LatticePoint> {
    let step = spec.step();
    let units = x / step;
    let z = libm::round(units);
    if !units.is_finite() || (units - z).abs() > ENCODE_TOLERANCE * units.abs().max(1.0) {
        return Err(Error::OffLattice { value: x, step });
    }
    if z.abs() >= 9.2e18 {
        return Err(invalid("value outside the 64-bit lattice range"));
    }
    Ok(LatticePoint(z as i64))
}

pub fn decode(p: LatticePoint, spec: &LatticeSpec) -> f64 {
    p.0 as f64 * spec.step()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn spec7() -> LatticeSpec {
        LatticeSpec::new(1.0, 3, 7, 1).unwrap()
    }

    #[test]
    fn phi_examples() {
        let s = spec7();
        assert_eq!(phi_q(LatticePoint(3), &s), LatticePoint(3));
        assert_eq!(phi_q(LatticePoint(4), &s), LatticePoint(-3));
        assert_eq!(phi_q(LatticePoint(-7), &s), LatticePoint(0));
        let v = [LatticePoint(3), LatticePoint(4), LatticePoint(-7)];
        assert_eq!(
            phi_q_vec(&v, &s),
            vec![LatticePoint(3), LatticePoint(-3), LatticePoint(0)]
        );
        assert!(phi_q_vec(&[], &s).is_empty());
        assert_eq!(phi_q_vec(&[LatticePoint(0); 5], &s), vec![LatticePoint(0); 5]);
    }

    #[test]
    fn phi_matches_enumeration() {
        // brute force: the unique member of [-3, 3] congruent to z mod 7
        let s = spec7();
        for z in -50..=50_i64 {
            let expect = (-3..=3).find(|c| (z - c) % 7 == 0).unwrap();
            assert_eq!(phi_q(LatticePoint(z), &s).0, expect, "z = {z}");
        }
    }

    #[test]
    fn codec() {
        let s = LatticeSpec::new(0.5, 9, 101, 1).unwrap();
        let step = s.step();
        assert_eq!(encode(0.0, &s).unwrap(), LatticePoint(0));
        assert_eq!(encode(step, &s).unwrap(), LatticePoint(1));
        assert!(matches!(encode(2.5 * step, &s), Err(Error::OffLattice { .. })));
        assert_eq!(encode(0.375, &s).unwrap(), LatticePoint(3));
        assert_eq!(decode(encode(-0.625, &s).unwrap(), &s), -0.625);
    }

    #[test]
    fn spec_validation() {
        assert!(LatticeSpec::new(1.0, 3, 8, 1).is_err());
        assert!(LatticeSpec::new(1.0, 1, 7, 1).is_err());
        assert!(LatticeSpec::new(0.0, 3, 7, 1).is_err());
        assert!(LatticeSpec::new(1.0, 3, 7, 0).is_err());
        assert!(LatticeSpec::new(1.0, 3, (1 << 40) + 1, 1 << 12).is_err());
        let even = LatticeSpec::new(1.0, 4, 7, 3).unwrap();
        assert_eq!(even.fine_scale(), 6);
        assert_eq!(LatticeSpec::new(1.0, 5, 7, 3).unwrap().fine_scale(), 3);
    }

    proptest! {
        #[test]
        fn wrap_is_periodic_and_idempotent(z in -1_000_000_000_i64..1_000_000_000, half in 0_u64..100_000) {
            let q = 2 * half + 1;
            let w = wrap_centered(z, q);
            prop_assert!(w.unsigned_abs() <= half);
            prop_assert_eq!(wrap_centered(w, q), w);
            prop_assert_eq!(wrap_centered(z + q as i64, q), w);
            prop_assert_eq!((z - w).rem_euclid(q as i64), 0);
        }

        #[test]
        fn homomorphism(xs in proptest::collection::vec(-1_000_000_i64..1_000_000, 0..40), half in 0_u64..65_536) {
            let q = 2 * half + 1;
            let spec = LatticeSpec::new(1.0, 3, q, 1).unwrap();
            let wrapped: Vec<LatticePoint> = phi_q_vec(
                &xs.iter().map(|&z| LatticePoint(z)).collect::<Vec<_>>(), &spec);
            let lhs = phi_q(LatticePoint(wrapped.iter().map(|p| p.0).sum()), &spec);
            let rhs = phi_q(LatticePoint(xs.iter().sum()), &spec);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn codec_roundtrip(z in -1_000_000_i64..1_000_000) {
            let s = LatticeSpec::new(0.3, 7, 101, 1).unwrap();
            let p = LatticePoint(z);
            prop_assert_eq!(encode(decode(p, &s), &s).unwrap(), p);
        }
    }
}
