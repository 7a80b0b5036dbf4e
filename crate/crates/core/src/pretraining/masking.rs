//! Random patch masking for masked image modeling.

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::PatchSequence;
use crate::error::{Error, Result};
use crate::nn::join;
use crate::params::ParamStore;

/// Cap on the number of masked patches for a 14×14 grid.
pub const DEFAULT_MAX_MASKED: usize = 75;

/// Masked positions as token indices `1..=N` (index 0 is cls and never masked).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    positions: Vec<usize>,
    num_patches: usize,
}

impl MaskSet {
    pub fn new(mut positions: Vec<usize>, num_patches: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::input("mask set must contain at least one position"));
        }
        positions.sort_unstable();
        if positions.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("mask positions must be unique"));
        }
        if positions[0] == 0 {
            return Err(Error::input("the cls token (index 0) cannot be masked"));
        }
        if let Some(&p) = positions.last().filter(|&&p| p > num_patches) {
            return Err(Error::input(format!("mask position {p} beyond {num_patches} patches")));
        }
        Ok(Self { positions, num_patches })
    }

    /// Empty mask. Violates the non-empty invariant on purpose; only useful
    /// for checking that masking nothing is the identity.
    pub fn empty(num_patches: usize) -> Self {
        Self {
            positions: Vec::new(),
            num_patches,
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn contains(&self, token_index: usize) -> bool {
        self.positions.binary_search(&token_index).is_ok()
    }

    /// 0/1 indicator over patch slots `0..N` (token index minus one).
    pub fn patch_indicator(&self) -> Vec<u8> {
        let mut v = vec![0u8; self.num_patches];
        for &p in &self.positions {
            v[p - 1] = 1;
        }
        v
    }
}

/// Draws `|M|` uniformly from `1..=max_masked`, then that many distinct
/// positions uniformly without replacement.
pub fn sample_mask<R: Rng + ?Sized>(num_patches: usize, max_masked: usize, rng: &mut R) -> Result<MaskSet> {
    if max_masked == 0 || max_masked > num_patches {
        return Err(Error::input(format!(
            "max_masked {max_masked} must lie in 1..={num_patches}"
        )));
    }
    let count = rng.random_range(1..=max_masked);
    let positions = rand::seq::index::sample(rng, num_patches, count)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    MaskSet::new(positions, num_patches)
}

/// Where the mask token is substituted relative to the positional add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPlacement {
    /// Replace the patch embedding; positional embeddings are added afterwards.
    #[default]
    BeforePositional,
    /// Replace the fully assembled token (no positional information).
    AfterPositional,
}

/// Learnable vector substituted at masked positions.
#[derive(Debug, Clone)]
pub struct MaskToken {
    m: Tensor,
}

impl MaskToken {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            m: store.normal(&join(prefix, "mask_token"), &[dim], 0.02)?,
        })
    }

    pub fn from_tensor(m: Tensor) -> Self {
        Self { m }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.m
    }
}

fn indicator(masks: &[MaskSet], n: usize, with_cls: bool, device: &candle_core::Device) -> Result<Tensor> {
    let width = if with_cls { n + 1 } else { n };
    let mut flags = Vec::with_capacity(masks.len() * width);
    for m in masks {
        if m.num_patches != n {
            return Err(Error::dim(format!("mask built for {} patches, sequence has {n}", m.num_patches)));
        }
        if with_cls {
            flags.push(0u8);
        }
        flags.extend(m.patch_indicator());
    }
    Ok(Tensor::from_vec(flags, (masks.len(), width, 1), device)?)
}

fn substitute(x: &Tensor, flags: &Tensor, token: &MaskToken) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    if token.m.dims() != [d] {
        return Err(Error::dim(format!("mask token has shape {:?}, expected [{d}]", token.m.dims())));
    }
    let m = token.m.to_dtype(x.dtype())?.reshape((1, 1, d))?.broadcast_as((b, t, d))?;
    let flags = flags.broadcast_as((b, t, d))?;
    Ok(flags.where_cond(&m, x)?)
}

/// Replaces masked patch embeddings by the mask token; the positional table
/// is added later by [`PatchSequence::tokens`].
pub fn apply_mask(seq: &PatchSequence, masks: &[MaskSet], token: &MaskToken) -> Result<PatchSequence> {
    if masks.len() != seq.batch() {
        return Err(Error::dim(format!("{} masks for a batch of {}", masks.len(), seq.batch())));
    }
    let flags = indicator(masks, seq.num_patches(), false, seq.patches.device())?;
    Ok(PatchSequence {
        patches: substitute(&seq.patches, &flags, token)?,
        cls: seq.cls.clone(),
        pos: seq.pos.clone(),
    })
}

/// Variant substituting into assembled `(B, N + 1, D)` tokens.
pub fn apply_mask_to_tokens(tokens: &Tensor, masks: &[MaskSet], token: &MaskToken) -> Result<Tensor> {
    let (b, t, _) = tokens.dims3()?;
    if masks.len() != b {
        return Err(Error::dim(format!("{} masks for a batch of {b}", masks.len())));
    }
    let flags = indicator(masks, t - 1, true, tokens.device())?;
    substitute(tokens, &flags, token)
}

/// Mask placement applied end to end: returns the `(B, N + 1, D)` sequence
/// fed to the image blocks.
pub fn masked_tokens(
    seq: &PatchSequence,
    masks: &[MaskSet],
    token: &MaskToken,
    placement: MaskPlacement,
) -> Result<Tensor> {
    match placement {
        MaskPlacement::BeforePositional => apply_mask(seq, masks, token)?.tokens(),
        MaskPlacement::AfterPositional => apply_mask_to_tokens(&seq.tokens()?, masks, token),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_masks_respect_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let m = sample_mask(196, 75, &mut rng).unwrap();
            assert!((1..=75).contains(&m.len()));
            assert!(!m.contains(0));
        }
    }

    #[test]
    fn cap_of_one_gives_single_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_mask(196, 1, &mut rng).unwrap().len(), 1);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let a = sample_mask(196, 75, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mask(196, 75, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cls_and_duplicates_rejected() {
        assert!(MaskSet::new(vec![0, 3], 10).is_err());
        assert!(MaskSet::new(vec![3, 3], 10).is_err());
        assert!(MaskSet::new(vec![11], 10).is_err());
        assert!(MaskSet::new(vec![], 10).is_err());
    }

    fn sequence(b: usize, n: usize, d: usize) -> PatchSequence {
        let dev = Device::Cpu;
        PatchSequence {
            patches: Tensor::randn(0f64, 1.0, (b, n, d), &dev).unwrap(),
            cls: Tensor::randn(0f64, 1.0, d, &dev).unwrap(),
            pos: Tensor::randn(0f64, 1.0, (n + 1, d), &dev).unwrap(),
        }
    }

    #[test]
    fn empty_mask_is_identity() {
        let seq = sequence(2, 6, 4);
        let tok = MaskToken::from_tensor(Tensor::ones(4, DType::F64, &Device::Cpu).unwrap());
        let out = apply_mask(&seq, &[MaskSet::empty(6), MaskSet::empty(6)], &tok).unwrap();
        assert_eq!(
            out.patches.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            seq.patches.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }

    #[test]
    fn masked_rows_equal_token_and_others_untouched() {
        let n = 196;
        let seq = sequence(1, n, 3);
        let tok = MaskToken::from_tensor(Tensor::new(&[7.0f64, -7.0, 0.5], &Device::Cpu).unwrap());
        let mask = MaskSet::new((1..=75).collect(), n).unwrap();
        let out = apply_mask(&seq, &[mask.clone()], &tok).unwrap();
        let got = out.patches.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let orig = seq.patches.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let mut masked = 0;
        for i in 0..n {
            if mask.contains(i + 1) {
                assert_eq!(got[i], vec![7.0, -7.0, 0.5]);
                masked += 1;
            } else {
                let a: Vec<u64> = got[i].iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = orig[i].iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b);
            }
        }
        assert_eq!(masked, 75);
    }

    #[test]
    fn after_positional_keeps_cls() {
        let seq = sequence(1, 4, 2);
        let tok = MaskToken::from_tensor(Tensor::zeros(2, DType::F64, &Device::Cpu).unwrap());
        let tokens = seq.tokens().unwrap();
        let out = apply_mask_to_tokens(&tokens, &[MaskSet::new(vec![1, 4], 4).unwrap()], &tok).unwrap();
        let a = out.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let b = tokens.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], vec![0.0, 0.0]);
        assert_eq!(a[2], b[2]);
        assert_eq!(a[4], vec![0.0, 0.0]);
    }
}
