//! Pairwise-mask secure aggregation over `ℤ_Q`, with the shared noise draw split
//! exactly across participants.
//!
//! Each participant `i` sends
//! `wrap_Q(wrap_Q(x_i + share_i) + Σ_{j} u_ij - Σ_{j} u_ji)` in fine units.
//! Masks cancel in the modular sum and the shares add up to the single draw
//! `ν`, so the server recovers `wrap_Q(Σ x_i + ν)` and nothing else.
//!
//! Masks come from a seeded stream per unordered pair; there is no key
//! agreement and no dropout recovery.

use alloc::vec::Vec;
use rand::Rng;

use crate::discrete_gaussian::DiscreteGaussian;
use crate::error::{invalid, Error, Result};
use crate::lattice::{wrap_centered, LatticePoint, LatticeSpec};
use crate::rng::{stream, Purpose};
use crate::special::ceil_log2;

/// Noise magnitudes up to `TAIL_MULTIPLIER·σ'` are treated as in range when
/// sizing moduli and plaintext bounds.
pub const TAIL_MULTIPLIER: f64 = 12.0;

/// The cyclic group the payloads live in and their fixed-width bit encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireFormat {
    modulus: u64,
    bits: u32,
}

impl WireFormat {
    /// Wire format for `participants` clients sharing `spec`.
    ///
    /// Each client's coarse group has `q` elements, i.e. `q·fine_scale` fine
    /// residues; the aggregate field expands that `participants` times, so
    /// `Q` is the smallest odd integer `≥ participants·q·fine_scale` and each
    /// coordinate takes `⌈log₂(participants·q·fine_scale + 1)⌉` bits.
    pub fn for_protocol(spec: &LatticeSpec, participants: u32) -> Result<Self> {
        if participants == 0 {
            return Err(invalid("at least one participant is required"));
        }
        let per_client = u128::from(spec.q()) * spec.fine_scale() as u128;
        let field = u128::from(participants) * per_client;
        let modulus = if field % 2 == 1 { field } else { field + 1 };
        let modulus = u64::try_from(modulus).map_err(|_| invalid("wire modulus exceeds 64 bits"))?;
        Ok(Self {
            modulus,
            bits: ceil_log2(field + 1),
        })
    }

    /// A bare odd modulus, encoded with `⌈log₂ Q⌉` bits.
    pub fn with_modulus(modulus: u64) -> Result<Self> {
        if modulus.is_multiple_of(2) {
            return Err(invalid("wire modulus Q must be odd"));
        }
        if modulus >= 1 << 62 {
            return Err(invalid("wire modulus too large"));
        }
        Ok(Self {
            modulus,
            bits: ceil_log2(u128::from(modulus)).max(1),
        })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Bits per encoded coordinate.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `(Q-1)/2`.
    pub fn half_range(&self) -> i64 {
        ((self.modulus - 1) / 2) as i64
    }

    pub fn wrap(&self, v: i64) -> i64 {
        wrap_centered(v, self.modulus)
    }

    pub fn payload_bytes(&self, len: usize) -> usize {
        (len * self.bits as usize).div_ceil(8)
    }

    /// Packs residues in `[0, Q)` little-endian, `bits` per coordinate.
    pub fn encode(&self, payload: &[i64]) -> Vec<u8> {
        let mut out = alloc::vec![0u8; self.payload_bytes(payload.len())];
        let q = self.modulus as i64;
        let mut bit = 0usize;
        for &v in payload {
            let r = v.rem_euclid(q) as u64;
            for b in 0..self.bits as usize {
                if (r >> b) & 1 == 1 {
                    out[(bit + b) / 8] |= 1 << ((bit + b) % 8);
                }
            }
            bit += self.bits as usize;
        }
        out
    }

    /// Inverse of [`WireFormat::encode`], returning centered residues.
    pub fn decode(&self, bytes: &[u8], len: usize) -> Result<Vec<i64>> {
        if bytes.len() != self.payload_bytes(len) {
            return Err(invalid("payload byte length does not match the wire format"));
        }
        let mut out = Vec::with_capacity(len);
        let mut bit = 0usize;
        for _ in 0..len {
            let mut r = 0u64;
            for b in 0..self.bits as usize {
                let pos = bit + b;
                r |= u64::from((bytes[pos / 8] >> (pos % 8)) & 1) << b;
            }
            if r >= self.modulus {
                return Err(invalid("encoded residue out of range"));
            }
            out.push(self.wrap(r as i64));
            bit += self.bits as usize;
        }
        Ok(out)
    }
}

/// Mask `u_ij` shared by clients `from < to`: `from` adds it, `to` subtracts it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseMask {
    pub from: u32,
    pub to: u32,
    pub values: Vec<i64>,
}

/// Derives one mask per unordered pair of `participants` from `round_seed`.
pub fn derive_masks(
    round_seed: u64,
    participants: &[u32],
    d_pad: usize,
    modulus: u64,
) -> Result<Vec<PairwiseMask>> {
    if modulus.is_multiple_of(2) {
        return Err(invalid("wire modulus Q must be odd"));
    }
    let mut ids = participants.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("participants must be distinct"));
    }
    let half = ((modulus - 1) / 2) as i64;
    let mut masks = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let mut rng = stream(round_seed, Purpose::Mask, u64::from(i), u64::from(j));
            let values = (0..d_pad)
                .map(|_| rng.random_range(0..modulus) as i64 - half)
                .collect();
            masks.push(PairwiseMask {
                from: i,
                to: j,
                values,
            });
        }
    }
    Ok(masks)
}

/// Masks client `id` adds (`from == id`) and subtracts (`to == id`).
pub fn masks_for(masks: &[PairwiseMask], id: u32) -> (Vec<&PairwiseMask>, Vec<&PairwiseMask>) {
    let added = masks.iter().filter(|m| m.from == id).collect();
    let subtracted = masks.iter().filter(|m| m.to == id).collect();
    (added, subtracted)
}

/// One participant's part of the shared noise draw, in fine units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseShare {
    pub owner_rank: u32,
    pub share: Vec<i64>,
}

/// Share `rank` of the fine value `v` split `m` ways: `v div m`, plus one for
/// the first `v mod m` ranks (Euclidean division). The `m` shares sum to `v`.
pub fn split_fine(v: i64, m: u32, rank: u32) -> i64 {
    let m = i64::from(m);
    v.div_euclid(m) + i64::from(i64::from(rank) < v.rem_euclid(m))
}

/// Splits the coarse draw `ν` (scaled to fine units) into share `rank` of
/// `spec.split_denominator()`.
pub fn split_noise(full_noise: &[LatticePoint], spec: &LatticeSpec, rank: u32) -> Result<NoiseShare> {
    let m = spec.split_denominator();
    if rank >= m {
        return Err(invalid("share rank must be below the split denominator"));
    }
    let share = full_noise
        .iter()
        .map(|p| split_fine(p.to_fine(spec), m, rank))
        .collect();
    Ok(NoiseShare {
        owner_rank: rank,
        share,
    })
}

/// A payload as sent on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub payload: Vec<i64>,
    pub byte_len: usize,
}

/// `wrap_Q(wrap_Q(noised) + Σ added - Σ subtracted)`, coordinatewise.
pub fn mask_and_wrap(
    noised: &[i64],
    added: &[&PairwiseMask],
    subtracted: &[&PairwiseMask],
    wire: &WireFormat,
) -> Result<MaskedUpdate> {
    let d = noised.len();
    if added.iter().chain(subtracted).any(|m| m.values.len() != d) {
        return Err(invalid("mask length differs from the update length"));
    }
    let payload = (0..d)
        .map(|c| {
            let mut acc = i128::from(wire.wrap(noised[c]));
            acc += added.iter().map(|m| i128::from(m.values[c])).sum::<i128>();
            acc -= subtracted.iter().map(|m| i128::from(m.values[c])).sum::<i128>();
            let r = acc.rem_euclid(i128::from(wire.modulus())) as i64;
            wire.wrap(r)
        })
        .collect();
    Ok(MaskedUpdate {
        payload,
        byte_len: wire.payload_bytes(d),
    })
}

/// What the server recovers from one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Recentered modular sum of the payloads, in fine units.
    pub fine_sum: Vec<i64>,
    /// `fine_sum` in real units divided by the number of payloads.
    pub mean: Vec<f64>,
}

/// Sums payloads mod `Q`, recenters and rescales to the real mean.
///
/// With `plaintext_bound = Some(b)`, any recovered coordinate of magnitude
/// above `b` is reported as [`Error::OverflowSuspected`].
pub fn server_aggregate(
    payloads: &[MaskedUpdate],
    wire: &WireFormat,
    spec: &LatticeSpec,
    plaintext_bound: Option<i64>,
) -> Result<Aggregate> {
    let first = payloads.first().ok_or_else(|| invalid("no payloads to aggregate"))?;
    let d = first.payload.len();
    if payloads.iter().any(|p| p.payload.len() != d) {
        return Err(invalid("payload lengths differ"));
    }
    let modulus = i128::from(wire.modulus());
    let fine_sum: Vec<i64> = (0..d)
        .map(|c| {
            let s: i128 = payloads.iter().map(|p| i128::from(p.payload[c])).sum();
            wire.wrap(s.rem_euclid(modulus) as i64)
        })
        .collect();
    finish(fine_sum, payloads.len(), spec, plaintext_bound)
}

/// The same recovery without masks: `wrap_Q(Σ noised)`.
pub fn plain_aggregate(
    noised: &[Vec<i64>],
    wire: &WireFormat,
    spec: &LatticeSpec,
    plaintext_bound: Option<i64>,
) -> Result<Aggregate> {
    let first = noised.first().ok_or_else(|| invalid("no updates to aggregate"))?;
    let d = first.len();
    if noised.iter().any(|p| p.len() != d) {
        return Err(invalid("update lengths differ"));
    }
    let modulus = i128::from(wire.modulus());
    let fine_sum = (0..d)
        .map(|c| {
            let s: i128 = noised.iter().map(|p| i128::from(p[c])).sum();
            wire.wrap(s.rem_euclid(modulus) as i64)
        })
        .collect();
    finish(fine_sum, noised.len(), spec, plaintext_bound)
}

fn finish(fine_sum: Vec<i64>, m: usize, spec: &LatticeSpec, bound: Option<i64>) -> Result<Aggregate> {
    if let Some(bound) = bound {
        if let Some((coordinate, &value)) = fine_sum.iter().enumerate().find(|(_, v)| v.abs() > bound) {
            return Err(Error::OverflowSuspected {
                coordinate,
                value,
                bound,
            });
        }
    }
    let unit = spec.fine_unit() / m as f64;
    let mean = fine_sum.iter().map(|&v| v as f64 * unit).collect();
    Ok(Aggregate { fine_sum, mean })
}

/// `⌈TAIL_MULTIPLIER·σ'⌉` lattice units.
pub fn noise_tail_units(sigma_units: f64) -> i64 {
    libm::ceil(TAIL_MULTIPLIER * sigma_units) as i64
}

/// Smallest odd coarse `q` for which `m` participants at `k` levels never wrap
/// while `|ν| ≤ TAIL_MULTIPLIER·σ'`.
pub fn minimal_modulus(k: u32, sigma_units: f64, participants: u32) -> u64 {
    let m = u64::from(participants.max(1));
    let span = m * u64::from(k - 1) + 2 * noise_tail_units(sigma_units) as u64;
    let q = span / m + 1;
    if q.is_multiple_of(2) {
        q + 1
    } else {
        q
    }
}

/// Largest noise magnitude (lattice units) that cannot wrap the aggregate:
/// `⌊((Q-1)/2 - fine_scale·m(k-1)/2) / fine_scale⌋`, or `None` if even the
/// noiseless sum can wrap.
pub fn noise_headroom(spec: &LatticeSpec, wire: &WireFormat, participants: u32) -> Option<i64> {
    let f = i128::from(spec.fine_scale());
    let signal = f * i128::from(participants) * i128::from(spec.k() - 1) / 2;
    let room = i128::from(wire.half_range()) - signal;
    (room >= 0).then(|| (room / f) as i64)
}

/// Per-round union bound on the probability that some coordinate of the
/// aggregate wraps: `d_pad · 2 · P[N(0,σ'²) ≥ headroom]`.
pub fn overflow_probability(
    spec: &LatticeSpec,
    wire: &WireFormat,
    participants: u32,
    sigma_units: f64,
    d_pad: usize,
) -> Result<f64> {
    let Some(headroom) = noise_headroom(spec, wire, participants) else {
        return Ok(1.0);
    };
    if sigma_units == 0.0 {
        return Ok(0.0);
    }
    let tail = DiscreteGaussian::on_integers(sigma_units)?.tail_bound(headroom + 1)?;
    Ok((d_pad as f64 * 2.0 * tail.upper).min(1.0))
}

/// Fine-unit magnitude above which a recovered coordinate is implausible: the
/// full quantized range plus `TAIL_MULTIPLIER·σ'` of noise, capped at `(Q-1)/2`.
pub fn plaintext_bound(spec: &LatticeSpec, wire: &WireFormat, participants: u32, sigma_units: f64) -> i64 {
    let f = i128::from(spec.fine_scale());
    let signal = f * i128::from(participants) * i128::from(spec.k() - 1) / 2;
    let noise = f * i128::from(noise_tail_units(sigma_units));
    (signal + noise).min(i128::from(wire.half_range())) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn split_examples() {
        let spec = LatticeSpec::new(1.0, 3, 7, 3).unwrap();
        for r in 0..3 {
            assert_eq!(split_noise(&[LatticePoint(0)], &spec, r).unwrap().share, [0]);
            assert_eq!(split_noise(&[LatticePoint(1)], &spec, r).unwrap().share, [1]);
        }
        let spec4 = LatticeSpec::new(1.0, 3, 7, 4).unwrap();
        for r in 0..4 {
            assert_eq!(split_noise(&[LatticePoint(-1)], &spec4, r).unwrap().share, [-1]);
        }
        assert!(split_noise(&[LatticePoint(0)], &spec4, 4).is_err());
    }

    #[test]
    fn split_sums_exhaustively() {
        for m in 1..=6u32 {
            for v in -20..=20i64 {
                let total: i64 = (0..m).map(|r| split_fine(v, m, r)).sum();
                assert_eq!(total, v, "v {v} m {m}");
                let shares: Vec<i64> = (0..m).map(|r| split_fine(v, m, r)).collect();
                let spread = shares.iter().max().unwrap() - shares.iter().min().unwrap();
                assert!(spread <= 1);
            }
        }
    }

    #[test]
    fn wire_format_sizes() {
        let spec = LatticeSpec::new(1.0, 3, 255, 10).unwrap();
        let wire = WireFormat::for_protocol(&spec, 10).unwrap();
        assert_eq!(wire.modulus(), 25_501);
        assert_eq!(wire.bits(), ceil_log2(25_501));
        assert!(WireFormat::with_modulus(100).is_err());
        assert_eq!(WireFormat::with_modulus(1).unwrap().bits(), 1);
    }

    #[test]
    fn single_participant_has_no_masks() {
        assert!(derive_masks(1, &[7], 8, 101).unwrap().is_empty());
        assert!(derive_masks(1, &[1, 2], 8, 100).is_err());
        assert!(derive_masks(1, &[1, 1], 8, 101).is_err());
    }

    #[test]
    fn two_party_cancellation() {
        let wire = WireFormat::with_modulus(101).unwrap();
        let masks = derive_masks(99, &[3, 8], 16, 101).unwrap();
        let a: Vec<i64> = (0..16).map(|i| i - 8).collect();
        let b: Vec<i64> = (0..16).map(|i| 3 * i - 20).collect();
        let (ai, ao) = masks_for(&masks, 3);
        let (bi, bo) = masks_for(&masks, 8);
        let pa = mask_and_wrap(&a, &ai, &ao, &wire).unwrap();
        let pb = mask_and_wrap(&b, &bi, &bo, &wire).unwrap();
        for c in 0..16 {
            assert_eq!(wire.wrap(pa.payload[c] + pb.payload[c]), wire.wrap(a[c] + b[c]));
        }
        assert_ne!(pa.payload, a);
        let plain = mask_and_wrap(&a, &[], &[], &wire).unwrap();
        assert_eq!(plain.payload, a.iter().map(|&v| wire.wrap(v)).collect::<Vec<_>>());
    }

    #[test]
    fn recovery_and_overflow_diagnostic() {
        let spec = LatticeSpec::new(1.0, 3, 7, 1).unwrap();
        let wire = WireFormat::for_protocol(&spec, 1).unwrap();
        let p = MaskedUpdate {
            payload: alloc::vec![1, -1, 0, 3],
            byte_len: 1,
        };
        let agg = server_aggregate(core::slice::from_ref(&p), &wire, &spec, None).unwrap();
        assert_eq!(agg.mean, alloc::vec![1.0, -1.0, 0.0, 3.0]);
        let err = server_aggregate(&[p], &wire, &spec, Some(2)).unwrap_err();
        assert!(matches!(err, Error::OverflowSuspected { coordinate: 3, value: 3, bound: 2 }));
        assert!(server_aggregate(&[], &wire, &spec, None).is_err());
    }

    #[test]
    fn modulus_sizing() {
        let (k, sigma, m) = (9u32, 2.0, 10u32);
        let q = minimal_modulus(k, sigma, m);
        assert_eq!(q % 2, 1);
        let spec = LatticeSpec::new(1.0, k, q, m).unwrap();
        let wire = WireFormat::for_protocol(&spec, m).unwrap();
        let headroom = noise_headroom(&spec, &wire, m).unwrap();
        assert!(headroom >= noise_tail_units(sigma));
        // one step smaller must lose the guarantee
        if q >= 3 {
            let tight = LatticeSpec::new(1.0, k, q - 2, m).unwrap();
            let tight_wire = WireFormat::for_protocol(&tight, m).unwrap();
            let h = noise_headroom(&tight, &tight_wire, m).unwrap_or(-1);
            assert!(h < noise_tail_units(sigma));
        }
        let p = overflow_probability(&spec, &wire, m, sigma, 64).unwrap();
        assert!(p < 1e-9);
        let small = LatticeSpec::new(1.0, k, 9, m).unwrap();
        let small_wire = WireFormat::for_protocol(&small, m).unwrap();
        assert!(overflow_probability(&small, &small_wire, m, sigma, 64).unwrap() > 1e-3);
        assert_eq!(overflow_probability(&small, &small_wire, m, 0.0, 64).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn wire_codec_roundtrip(vals in proptest::collection::vec(-1_000_000i64..1_000_000, 0..40), half in 0u64..70_000) {
            let wire = WireFormat::with_modulus(2 * half + 1).unwrap();
            let centered: Vec<i64> = vals.iter().map(|&v| wire.wrap(v)).collect();
            let bytes = wire.encode(&centered);
            prop_assert_eq!(bytes.len(), wire.payload_bytes(centered.len()));
            prop_assert_eq!(wire.decode(&bytes, centered.len()).unwrap(), centered);
        }

        #[test]
        fn masked_sum_equals_plain_sum(
            seed in 0u64..10_000,
            m in 1usize..20,
            half in 50u64..65_535,
            d in 1usize..16,
        ) {
            let q = 2 * half + 1;
            let wire = WireFormat::with_modulus(q).unwrap();
            let ids: Vec<u32> = (0..m as u32).map(|i| i * 7 + 1).collect();
            let masks = derive_masks(seed, &ids, d, q).unwrap();
            let mut rng = stream(seed, Purpose::Trial, 0, 0);
            let plain: Vec<Vec<i64>> = (0..m)
                .map(|_| (0..d).map(|_| rng.random_range(-(half as i64)..=half as i64)).collect())
                .collect();
            let payloads: Vec<MaskedUpdate> = ids.iter().zip(&plain).map(|(&id, x)| {
                let (a, s) = masks_for(&masks, id);
                mask_and_wrap(x, &a, &s, &wire).unwrap()
            }).collect();
            let spec = LatticeSpec::new(1.0, 3, 3, 1).unwrap();
            let masked = server_aggregate(&payloads, &wire, &spec, None).unwrap();
            let direct = plain_aggregate(&plain, &wire, &spec, None).unwrap();
            prop_assert_eq!(masked.fine_sum, direct.fine_sum);
        }
    }
}
