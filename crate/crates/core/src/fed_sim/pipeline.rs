//! One round of compress → noise-share → mask → aggregate over already clipped
//! client updates.

use alloc::vec::Vec;

use crate::compressor::{clamp_linf, quantize, rotate, unrotate, ClippedUpdate, RotationSeed};
use crate::discrete_gaussian::DiscreteGaussian;
use crate::error::{invalid, Result};
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::rng::{derive_seed, stream, Purpose};
use crate::secure_agg::{
    derive_masks, masks_for, mask_and_wrap, plain_aggregate, server_aggregate, split_noise, Aggregate,
    MaskedUpdate, PairwiseMask, WireFormat,
};

/// Which of the two equivalent recovery paths the server runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationPath {
    #[default]
    Masked,
    /// Sums the noised updates directly; same output, no masking.
    Plain,
}

/// Everything about a round that does not depend on client data.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub spec: LatticeSpec,
    pub wire: WireFormat,
    /// `None` disables noise.
    pub noise: Option<DiscreteGaussian>,
    pub dim: usize,
    pub d_pad: usize,
    /// Checked against every recovered fine coordinate, if set.
    pub plaintext_bound: Option<i64>,
    pub path: AggregationPath,
}

/// Shared randomness of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMaterial {
    pub rotation: RotationSeed,
    /// The single noise draw, in lattice units.
    pub nu: Vec<LatticePoint>,
    pub masks: Vec<PairwiseMask>,
}

/// What one client produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientMessage {
    pub id: u32,
    /// Quantized update plus noise share, fine units, before wrapping.
    pub noised: Vec<i64>,
    pub masked: MaskedUpdate,
    /// Coordinates changed by the ℓ∞ clamp.
    pub clamped: usize,
}

/// Outcome of the server step, mapped back to model coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub aggregate: Aggregate,
    /// Unrotated mean update, length `dim`.
    pub mean: Vec<f64>,
}

impl Protocol {
    /// Protocol for `spec.split_denominator()` participants with noise `σ'`
    /// (lattice units, `0` for none) on vectors of length `dim`; no plaintext
    /// check.
    pub fn new(spec: LatticeSpec, sigma_units: f64, dim: usize, path: AggregationPath) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let wire = WireFormat::for_protocol(&spec, spec.split_denominator())?;
        let noise = if sigma_units > 0.0 {
            Some(DiscreteGaussian::with_step(sigma_units * spec.step(), spec.step())?)
        } else {
            None
        };
        Ok(Self {
            spec,
            wire,
            noise,
            dim,
            d_pad: dim.next_power_of_two(),
            plaintext_bound: None,
            path,
        })
    }
}

impl RoundMaterial {
    /// Draws the rotation, the noise vector and the pairwise masks for `ids`.
    pub fn draw(protocol: &Protocol, round_seed: u64, ids: &[u32]) -> Result<Self> {
        let rotation = RotationSeed::with_padded_dim(derive_seed(round_seed, Purpose::Rotation, 0, 0), protocol.d_pad)?;
        let nu = match &protocol.noise {
            Some(dist) => dist.sample_vec(protocol.d_pad, &mut stream(round_seed, Purpose::Noise, 0, 0))?,
            None => alloc::vec![LatticePoint(0); protocol.d_pad],
        };
        let masks = match protocol.path {
            AggregationPath::Masked => derive_masks(round_seed, ids, protocol.d_pad, protocol.wire.modulus())?,
            AggregationPath::Plain => Vec::new(),
        };
        Ok(Self { rotation, nu, masks })
    }
}

/// Client `rank` (position in the selection) with identity `id`.
pub fn client_message(
    protocol: &Protocol,
    material: &RoundMaterial,
    round_seed: u64,
    rank: u32,
    id: u32,
    update: &ClippedUpdate,
) -> Result<ClientMessage> {
    if update.dim() != protocol.dim {
        return Err(invalid("update length differs from the model dimension"));
    }
    let mut rotated = rotate(update, &material.rotation)?;
    let clamped = clamp_linf(&mut rotated, protocol.spec.g_max());
    let quantized = quantize(&rotated, &protocol.spec, &mut stream(round_seed, Purpose::Quantize, u64::from(id), 0));
    let share = split_noise(&material.nu, &protocol.spec, rank)?;
    let noised: Vec<i64> = quantized.to_fine().iter().zip(&share.share).map(|(a, b)| a + b).collect();
    let masked = match protocol.path {
        AggregationPath::Masked => {
            let (added, subtracted) = masks_for(&material.masks, id);
            mask_and_wrap(&noised, &added, &subtracted, &protocol.wire)?
        }
        AggregationPath::Plain => mask_and_wrap(&noised, &[], &[], &protocol.wire)?,
    };
    Ok(ClientMessage {
        id,
        noised,
        masked,
        clamped,
    })
}

/// Server recovery and unrotation.
pub fn recover(protocol: &Protocol, material: &RoundMaterial, messages: &[ClientMessage]) -> Result<Recovered> {
    let aggregate = match protocol.path {
        AggregationPath::Masked => {
            let payloads: Vec<MaskedUpdate> = messages.iter().map(|m| m.masked.clone()).collect();
            server_aggregate(&payloads, &protocol.wire, &protocol.spec, protocol.plaintext_bound)?
        }
        AggregationPath::Plain => {
            let noised: Vec<Vec<i64>> = messages.iter().map(|m| m.noised.clone()).collect();
            plain_aggregate(&noised, &protocol.wire, &protocol.spec, protocol.plaintext_bound)?
        }
    };
    let mean = unrotate(&aggregate.mean, protocol.dim, &material.rotation)?;
    Ok(Recovered { aggregate, mean })
}

/// Runs the whole round serially.
pub fn aggregate_round(protocol: &Protocol, round_seed: u64, ids: &[u32], updates: &[ClippedUpdate]) -> Result<(RoundMaterial, Vec<ClientMessage>, Recovered)> {
    if ids.len() != updates.len() || ids.is_empty() {
        return Err(invalid("need one update per selected client"));
    }
    let material = RoundMaterial::draw(protocol, round_seed, ids)?;
    let messages = ids
        .iter()
        .zip(updates)
        .enumerate()
        .map(|(rank, (&id, u))| client_message(protocol, &material, round_seed, rank as u32, id, u))
        .collect::<Result<Vec<_>>>()?;
    let recovered = recover(protocol, &material, &messages)?;
    Ok((material, messages, recovered))
}
