//! Texture parameters: frequency-resolved Gram tensors of the feature maps,
//! the normalized distance between two parameter sets, and its gradient.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cnn::{FeatureStack, FilterBankSpec};
use crate::error::{Error, Result};
use crate::par;

/// Binds a [`ParamSet`] to the pipeline that extracted it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Symmetric channel-pair selection; `true` keeps the pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMask {
    channels: usize,
    keep: Vec<bool>,
}

impl PairMask {
    pub fn all(channels: usize) -> Self {
        Self {
            channels,
            keep: vec![true; channels * channels],
        }
    }

    pub fn from_fn(channels: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut keep = vec![false; channels * channels];
        for i in 0..channels {
            for j in 0..channels {
                keep[i * channels + j] = f(i, j) && f(j, i);
            }
        }
        Self { channels, keep }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.channels + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_unordered_pairs(&self) -> usize {
        (0..self.channels)
            .map(|i| (i..self.channels).filter(|&j| self.keeps(i, j)).count())
            .sum()
    }
}

/// Keeps only correlations between channels produced by filters of the same size.
pub fn cross_size_mask(spec: &FilterBankSpec) -> PairMask {
    PairMask::from_fn(spec.total_channels(), |i, j| spec.block_of(i) == spec.block_of(j))
}

/// `H(i, j, x) = sum_t F_i(x, t) F_j(x, t)`, stored densely at `(i * C + j) * bins + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTensor {
    pub values: Vec<f64>,
    pub channels: usize,
    pub bins: usize,
    pub mask: Option<PairMask>,
    pub layer_index: usize,
}

impl GramTensor {
    #[inline]
    pub fn get(&self, i: usize, j: usize, x: usize) -> f64 {
        self.values[(i * self.channels + j) * self.bins + x]
    }

    fn keeps(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.keeps(i, j))
    }

    /// Frobenius norm over the kept entries.
    pub fn norm(&self) -> f64 {
        self.kept_sum(|v| v * v).sqrt()
    }

    fn kept_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        let c = self.channels;
        let mut acc = 0.0;
        for i in 0..c {
            for j in 0..c {
                if self.keeps(i, j) {
                    let base = (i * c + j) * self.bins;
                    acc += self.values[base..base + self.bins].iter().map(|v| f(*v)).sum::<f64>();
                }
            }
        }
        acc
    }

    fn same_layout(&self, other: &GramTensor) -> bool {
        self.channels == other.channels && self.bins == other.bins && self.mask == other.mask
    }
}

/// `G(i, j) = sum_{x, t} F_i(x, t) F_j(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Vec<f64>,
    pub channels: usize,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.channels + j]
    }
}

/// Gram tensors of every layer plus the fingerprint of the extraction pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<GramTensor>,
    pub fingerprint: Fingerprint,
}

impl ParamSet {
    fn check_compatible(&self, target: &ParamSet) -> Result<()> {
        if self.fingerprint != target.fingerprint {
            return Err(Error::Fingerprint {
                expected: target.fingerprint.to_string(),
                found: self.fingerprint.to_string(),
            });
        }
        if self.tensors.len() != target.tensors.len()
            || self.tensors.iter().zip(&target.tensors).any(|(a, b)| !a.same_layout(b))
        {
            return Err(Error::Shape("parameter sets have different layouts".into()));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn gram_matrix(features: &FeatureStack) -> GramMatrix {
    let c = features.channels;
    let mut values = vec![0.0; c * c];
    par::for_each_chunk(&mut values, c.max(1), |i, row| {
        let fi = features.channel(i);
        for (j, v) in row.iter_mut().enumerate().skip(i) {
            *v = dot(fi, features.channel(j));
        }
    });
    for i in 0..c {
        for j in 0..i {
            values[i * c + j] = values[j * c + i];
        }
    }
    GramMatrix { values, channels: c }
}

/// Time-summed channel correlations per frequency bin. Pairs rejected by
/// `mask` are stored as zero.
pub fn gram_tensor(features: &FeatureStack, mask: Option<&PairMask>) -> Result<GramTensor> {
    let (c, bins, frames) = (features.channels, features.bins, features.frames);
    if let Some(m) = mask {
        if m.channels() != c {
            return Err(Error::Shape(format!(
                "mask covers {} channels, features have {c}",
                m.channels()
            )));
        }
    }
    let keeps = |i: usize, j: usize| mask.is_none_or(|m| m.keeps(i, j));
    let mut values = vec![0.0; c * c * bins];
    par::for_each_chunk(&mut values, (c * bins).max(1), |i, block| {
        let fi = features.channel(i);
        for j in i..c {
            if !keeps(i, j) {
                continue;
            }
            let fj = features.channel(j);
            for x in 0..bins {
                let r = x * frames..(x + 1) * frames;
                block[j * bins + x] = dot(&fi[r.clone()], &fj[r]);
            }
        }
    });
    for i in 0..c {
        for j in 0..i {
            let (dst, src) = ((i * c + j) * bins, (j * c + i) * bins);
            values.copy_within(src..src + bins, dst);
        }
    }
    Ok(GramTensor {
        values,
        channels: c,
        bins,
        mask: mask.cloned(),
        layer_index: 0,
    })
}

/// Builds a parameter set from per-layer feature stacks.
pub fn param_set(
    layers: &[FeatureStack],
    mask: Option<&PairMask>,
    fingerprint: Fingerprint,
) -> Result<ParamSet> {
    let tensors = layers
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let mut h = gram_tensor(f, mask)?;
            h.layer_index = k;
            Ok(h)
        })
        .collect::<Result<_>>()?;
    Ok(ParamSet {
        tensors,
        fingerprint,
    })
}

fn layer_term(current: &GramTensor, target: &GramTensor) -> (f64, f64, f64) {
    let c = current.channels;
    let mut diff2 = 0.0;
    for i in 0..c {
        for j in 0..c {
            if current.keeps(i, j) {
                let base = (i * c + j) * current.bins;
                let r = base..base + current.bins;
                diff2 += current.values[r.clone()]
                    .iter()
                    .zip(&target.values[r])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
    }
    let diff = diff2.sqrt();
    let target_norm = target.norm();
    let term = if target_norm > 0.0 { diff / target_norm } else { diff };
    (term, diff, target_norm)
}

/// `L = sum_k |H~_k - H_k| / |H~_k|` with Frobenius norms over kept entries.
///
/// A layer whose target tensor is all zero contributes the unnormalized distance.
pub fn texture_loss(current: &ParamSet, target: &ParamSet) -> Result<f64> {
    current.check_compatible(target)?;
    Ok(current
        .tensors
        .iter()
        .zip(&target.tensors)
        .map(|(h, t)| layer_term(h, t).0)
        .sum())
}

/// Loss value and its gradient over each layer's feature maps.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub per_layer: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

/// Gradient of [`texture_loss`] with respect to the feature maps:
/// `dL/dF_a(x, t) = 2 sum_j D(a, j, x) F_j(x, t)` where
/// `D = (H - H~) / (|H - H~| |H~|)`. At `H = H~` the gradient is zero.
/// The pair mask is taken from the target tensors.
pub fn texture_loss_backward(
    layers: &[FeatureStack],
    target: &ParamSet,
) -> Result<LossGradient> {
    if layers.len() != target.tensors.len() {
        return Err(Error::Shape(format!(
            "{} feature layers for {} target tensors",
            layers.len(),
            target.tensors.len()
        )));
    }
    let mut loss = 0.0;
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut grads = Vec::with_capacity(layers.len());
    for (features, tgt) in layers.iter().zip(&target.tensors) {
        let current = gram_tensor(features, tgt.mask.as_ref())?;
        if !current.same_layout(tgt) {
            return Err(Error::Shape(format!(
                "features give a {}x{}x{} tensor, target is {}x{}x{} (or masks differ)",
                current.channels, current.channels, current.bins, tgt.channels, tgt.channels, tgt.bins
            )));
        }
        let (term, diff, target_norm) = layer_term(&current, tgt);
        loss += term;
        per_layer.push(term);
        let scale = if diff == 0.0 {
            0.0
        } else if target_norm > 0.0 {
            2.0 / (diff * target_norm)
        } else {
            2.0 / diff
        };
        grads.push(weighted_sum(features, &current, tgt, scale));
    }
    Ok(LossGradient {
        loss,
        per_layer,
        grads,
    })
}

/// `out_a(x, t) = scale * sum_j (H - H~)(a, j, x) F_j(x, t)` over kept pairs.
fn weighted_sum(features: &FeatureStack, current: &GramTensor, target: &GramTensor, scale: f64) -> Vec<f64> {
    let (c, bins, frames) = (features.channels, features.bins, features.frames);
    let map = bins * frames;
    let mut out = vec![0.0; features.values.len()];
    if scale == 0.0 {
        return out;
    }
    par::for_each_chunk(&mut out, map.max(1), |a, dst| {
        for j in 0..c {
            if !current.keeps(a, j) {
                continue;
            }
            let base = (a * c + j) * bins;
            let fj = features.channel(j);
            for x in 0..bins {
                let d = scale * (current.values[base + x] - target.values[base + x]);
                if d == 0.0 {
                    continue;
                }
                let r = x * frames..(x + 1) * frames;
                for (o, f) in dst[r.clone()].iter_mut().zip(&fj[r]) {
                    *o += d * f;
                }
            }
        }
    });
    out
}

/// Entry counts of one Gram tensor layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub channels: usize,
    pub bins: usize,
    /// `C * C * bins`, both triangles.
    pub dense_entries: usize,
    /// `C (C + 1) / 2`.
    pub unordered_pairs: usize,
    pub unordered_entries: usize,
    /// Unordered pairs that survive cross-size pruning.
    pub pruned_pairs: usize,
    pub pruned_entries: usize,
}

impl ParamCounts {
    pub fn new(spec: &FilterBankSpec, bins: usize) -> Self {
        let c = spec.total_channels();
        let per = spec.channels_per_size;
        let unordered_pairs = c * (c + 1) / 2;
        let pruned_pairs = spec.sizes.len() * per * (per + 1) / 2;
        Self {
            channels: c,
            bins,
            dense_entries: c * c * bins,
            unordered_pairs,
            unordered_entries: unordered_pairs * bins,
            pruned_pairs,
            pruned_entries: pruned_pairs * bins,
        }
    }

    /// Unordered-pair entries actually constrained under the chosen pruning setting.
    pub fn active_entries(&self, pruned: bool) -> usize {
        if pruned {
            self.pruned_entries
        } else {
            self.unordered_entries
        }
    }
}
