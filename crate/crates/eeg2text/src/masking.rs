//! Self-supervised masking strategies over patch sequences.
//!
//! Three strategies, all hitting the same quota (round-half-up of
//! ratio x n_patches, floor 1):
//! * `random`: a uniform index set, fixed across epochs for one seed;
//! * `continuous`: contiguous runs with geometric run lengths (mean 3)
//!   until the quota is reached, fixed across epochs;
//! * `remask`: the random strategy re-keyed on (seed, epoch), so the set
//!   changes every epoch.
//!
//! Masked patches are replaced by a per-channel fill vector broadcast over
//! time. The fill is supplied by the caller; pre-training learns it as a
//! parameter rather than hard-coding zeros, so masking is never confused
//! with silent signal.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::mix_seed;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("n_patches must be >= 1")]
    ZeroPatches,
    #[error("mask ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("mask spec covers {spec} patches but {got} patches were supplied")]
    LengthMismatch { spec: usize, got: usize },
    #[error("mask fill has {fill} channels but patches have {channels}")]
    FillChannelMismatch { fill: usize, channels: usize },
    #[error("unknown mask strategy {0:?} (expected random, continuous, or remask)")]
    UnknownStrategy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Random,
    Continuous,
    Remask,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Continuous => "continuous",
            MaskStrategy::Remask => "remask",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = MaskError;
    fn from_str(s: &str) -> Result<Self, MaskError> {
        match s {
            "random" => Ok(MaskStrategy::Random),
            "continuous" => Ok(MaskStrategy::Continuous),
            "remask" => Ok(MaskStrategy::Remask),
            other => Err(MaskError::UnknownStrategy(other.to_string())),
        }
    }
}

/// A concrete masking decision for one patch sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub n_patches: usize,
    /// Sorted set of masked patch indices, each < n_patches.
    pub masked: BTreeSet<usize>,
    pub strategy: MaskStrategy,
    pub epoch: u64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn is_masked(&self, idx: usize) -> bool {
        self.masked.contains(&idx)
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked.iter().copied().collect()
    }
}

/// Round-half-up of ratio x n, clamped to [1, n].
pub fn mask_quota(n_patches: usize, ratio: f64) -> usize {
    ((ratio * n_patches as f64 + 0.5).floor() as usize).clamp(1, n_patches)
}

// stream tags so the three strategies never share an rng stream
const RANDOM_STREAM: u64 = 11;
const CONTINUOUS_STREAM: u64 = 12;
const REMASK_STREAM: u64 = 13;

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BTreeSet<usize> {
    rand::seq::index::sample(rng, n, k).into_iter().collect()
}

/// Geometric run length with mean 1/p, support {1, 2, ...}, by inversion.
fn geometric_len(rng: &mut ChaCha8Rng, p: f64) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize
}

/// Builds the masked index set for one (strategy, seed, epoch) key.
/// random and continuous ignore the epoch; remask folds it into the key.
pub fn make_mask(
    strategy: MaskStrategy,
    n_patches: usize,
    ratio: f64,
    epoch: u64,
    seed: u64,
) -> Result<MaskSpec, MaskError> {
    if n_patches == 0 {
        return Err(MaskError::ZeroPatches);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MaskError::InvalidRatio(ratio));
    }
    let quota = mask_quota(n_patches, ratio);
    let masked = match strategy {
        MaskStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, RANDOM_STREAM]));
            sample_distinct(&mut rng, n_patches, quota)
        }
        MaskStrategy::Remask => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, REMASK_STREAM, epoch]));
            sample_distinct(&mut rng, n_patches, quota)
        }
        MaskStrategy::Continuous => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, CONTINUOUS_STREAM]));
            let mut masked: BTreeSet<usize> = BTreeSet::new();
            while masked.len() < quota {
                let remaining = quota - masked.len();
                let len = geometric_len(&mut rng, 1.0 / 3.0).min(remaining);
                // start on an unmasked patch so every run adds something
                let pick = rng.gen_range(0..n_patches - masked.len());
                let start = (0..n_patches)
                    .filter(|i| !masked.contains(i))
                    .nth(pick)
                    .expect("pick < number of unmasked patches");
                let mut placed = 0;
                let mut i = start;
                // already-masked patches inside the run extend it for free
                while placed < len && i < n_patches {
                    placed += usize::from(masked.insert(i));
                    i += 1;
                }
            }
            masked
        }
    };
    debug_assert_eq!(masked.len(), quota);
    Ok(MaskSpec { n_patches, masked, strategy, epoch, seed })
}

/// Replaces masked patches with `mask_fill` broadcast over time; unmasked
/// patches are returned bit-identical.
pub fn apply_mask(
    patches: &[Tensor<f32>],
    spec: &MaskSpec,
    mask_fill: &[f32],
) -> Result<Vec<Tensor<f32>>, MaskError> {
    if patches.len() != spec.n_patches {
        return Err(MaskError::LengthMismatch { spec: spec.n_patches, got: patches.len() });
    }
    patches
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let (c, l) = (p.shape()[0], p.shape()[1]);
            if c != mask_fill.len() {
                return Err(MaskError::FillChannelMismatch { fill: mask_fill.len(), channels: c });
            }
            if spec.is_masked(idx) {
                let mut data = Vec::with_capacity(c * l);
                for &fill in mask_fill {
                    data.extend(std::iter::repeat(fill).take(l));
                }
                Ok(Tensor::new(vec![c, l], data).expect("fill buffer sized by construction"))
            } else {
                Ok(p.clone())
            }
        })
        .collect()
}
