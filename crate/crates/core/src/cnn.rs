//! Untrained single-layer filter bank with square filters of several sizes.
//!
//! Each filter is cross-correlated with the log-spectrogram under zero
//! "same" padding and stride one, so every channel keeps the input's
//! `bins x frames` shape. Channels are stacked in ascending filter size and
//! passed through a ReLU. There are no biases.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterBankSpec {
    /// Odd square filter side lengths.
    pub sizes: Vec<usize>,
    pub channels_per_size: usize,
    pub seed: u64,
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        Self {
            sizes: vec![3, 5, 7, 11, 15, 19, 23, 27],
            channels_per_size: 128,
            seed: 0x5eed_f117,
        }
    }
}

impl FilterBankSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("filter bank needs at least one size".into()));
        }
        if let Some(s) = self.sizes.iter().find(|s| **s % 2 == 0) {
            return Err(Error::Config(format!("filter size {s} is even")));
        }
        if self.channels_per_size == 0 {
            return Err(Error::Config("channels per size must be at least 1".into()));
        }
        Ok(())
    }

    /// Sizes in the channel stacking order (ascending, duplicates kept).
    pub fn ordered_sizes(&self) -> Vec<usize> {
        let mut sizes = self.sizes.clone();
        sizes.sort_unstable();
        sizes
    }

    pub fn total_channels(&self) -> usize {
        self.channels_per_size * self.sizes.len()
    }

    pub fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Standard deviation of the Gaussian weights for one size, `sqrt(2 / fan_in)`.
    pub fn weight_std(size: usize) -> f64 {
        (2.0 / (size * size) as f64).sqrt()
    }

    /// Index of the size block that channel `c` belongs to.
    pub fn block_of(&self, channel: usize) -> usize {
        channel / self.channels_per_size
    }
}

/// One block of same-sized filters, weights laid out `channel x row x column`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBlock {
    pub size: usize,
    pub channels: Range<usize>,
    pub weights: Vec<f64>,
}

impl FilterBlock {
    fn filter(&self, local: usize) -> &[f64] {
        let k = self.size * self.size;
        &self.weights[local * k..(local + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    spec: FilterBankSpec,
    blocks: Vec<FilterBlock>,
}

/// Post-ReLU feature maps, laid out `channel x bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub values: Vec<f64>,
    pub channels: usize,
    pub bins: usize,
    pub frames: usize,
    /// Filter size and channel range of each block, in stacking order.
    pub size_offsets: Vec<(usize, Range<usize>)>,
}

impl FeatureStack {
    pub fn map_len(&self) -> usize {
        self.bins * self.frames
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let m = self.map_len();
        &self.values[c * m..(c + 1) * m]
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, t: usize) -> f64 {
        self.values[(c * self.bins + f) * self.frames + t]
    }

    /// A stack with the same geometry and the given values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "feature stack expects {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            channels: self.channels,
            bins: self.bins,
            frames: self.frames,
            size_offsets: self.size_offsets.clone(),
        })
    }

    /// Builds a stack from raw values; every channel is treated as its own block.
    pub fn from_raw(values: Vec<f64>, channels: usize, bins: usize, frames: usize) -> Result<Self> {
        if values.len() != channels * bins * frames {
            return Err(Error::Shape(format!(
                "{} values do not fill {channels}x{bins}x{frames}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            channels,
            bins,
            frames,
            size_offsets: (0..channels).map(|c| (1, c..c + 1)).collect(),
        })
    }
}

impl FilterBank {
    /// Draws every weight i.i.d. from `N(0, 2 / size^2)`, block by block in
    /// ascending size order, from a single ChaCha8 stream seeded with `spec.seed`.
    pub fn new(spec: FilterBankSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut blocks = Vec::with_capacity(spec.sizes.len());
        for (b, size) in spec.ordered_sizes().into_iter().enumerate() {
            let normal = Normal::new(0.0, FilterBankSpec::weight_std(size))
                .map_err(|e| Error::Config(e.to_string()))?;
            let weights = (0..spec.channels_per_size * size * size)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let start = b * spec.channels_per_size;
            blocks.push(FilterBlock {
                size,
                channels: start..start + spec.channels_per_size,
                weights,
            });
        }
        Ok(Self { spec, blocks })
    }

    /// Builds a bank from explicit weights. Each entry is `(size, weights)` with
    /// `weights.len()` a multiple of `size^2`; blocks must be given in ascending size order.
    pub fn from_weights(blocks: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(blocks.len());
        let mut next = 0;
        let mut per_size = None;
        for (size, weights) in blocks {
            if size % 2 == 0 || size == 0 {
                return Err(Error::Config(format!("filter size {size} is not odd")));
            }
            let k = size * size;
            if weights.is_empty() || weights.len() % k != 0 {
                return Err(Error::Shape(format!(
                    "{} weights do not form whole {size}x{size} filters",
                    weights.len()
                )));
            }
            let n = weights.len() / k;
            if *per_size.get_or_insert(n) != n {
                return Err(Error::Shape("blocks must hold equal channel counts".into()));
            }
            out.push(FilterBlock {
                size,
                channels: next..next + n,
                weights,
            });
            next += n;
        }
        if out.windows(2).any(|w| w[0].size > w[1].size) {
            return Err(Error::Config("blocks must be in ascending size order".into()));
        }
        let spec = FilterBankSpec {
            sizes: out.iter().map(|b| b.size).collect(),
            channels_per_size: per_size.unwrap_or(0),
            seed: 0,
        };
        spec.validate()?;
        Ok(Self { spec, blocks: out })
    }

    pub fn spec(&self) -> &FilterBankSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[FilterBlock] {
        &self.blocks
    }

    pub fn channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.channels.end)
    }

    fn block_for(&self, channel: usize) -> &FilterBlock {
        self.blocks
            .iter()
            .find(|b| b.channels.contains(&channel))
            .expect("channel index within the bank")
    }

    fn check_input(&self, input: &[f64], bins: usize, frames: usize) -> Result<()> {
        if input.len() != bins * frames {
            return Err(Error::Shape(format!(
                "input has {} values, expected {bins}x{frames}",
                input.len()
            )));
        }
        let largest = self.spec.max_size();
        if bins < largest || frames < largest {
            return Err(Error::Shape(format!(
                "input {bins}x{frames} is smaller than the largest filter ({largest})"
            )));
        }
        Ok(())
    }

    /// Pre-activation responses: the linear part of [`FilterBank::forward`].
    pub fn correlate(&self, input: &[f64], bins: usize, frames: usize) -> Result<Vec<f64>> {
        self.check_input(input, bins, frames)?;
        let map = bins * frames;
        let mut out = vec![0.0; self.channels() * map];
        par::for_each_chunk(&mut out, map, |c, dst| {
            let block = self.block_for(c);
            let w = block.filter(c - block.channels.start);
            correlate_same(input, bins, frames, w, block.size, dst);
        });
        Ok(out)
    }

    /// Adjoint of [`FilterBank::correlate`]: full correlation with flipped filters,
    /// summed over channels. Rows are independent, channels are summed in order.
    pub fn correlate_adjoint(&self, grad: &[f64], bins: usize, frames: usize) -> Result<Vec<f64>> {
        let map = bins * frames;
        if grad.len() != self.channels() * map {
            return Err(Error::Shape(format!(
                "gradient has {} values, expected {}x{bins}x{frames}",
                grad.len(),
                self.channels()
            )));
        }
        let mut out = vec![0.0; map];
        par::for_each_chunk(&mut out, frames, |x, row| {
            for block in &self.blocks {
                let s = block.size;
                let p = (s / 2) as isize;
                for c in block.channels.clone() {
                    let w = block.filter(c - block.channels.start);
                    let g = &grad[c * map..(c + 1) * map];
                    for a in 0..s {
                        // forward read input row x from output row x - a + p
                        let gx = x as isize - a as isize + p;
                        if gx < 0 || gx >= bins as isize {
                            continue;
                        }
                        let g_row = &g[gx as usize * frames..(gx as usize + 1) * frames];
                        for b in 0..s {
                            let dy = b as isize - p;
                            let wv = w[a * s + b];
                            // row[y] += w * g_row[y - dy]
                            let lo = dy.max(0) as usize;
                            let hi = (frames as isize + dy).min(frames as isize) as usize;
                            if lo >= hi {
                                continue;
                            }
                            let src = &g_row[(lo as isize - dy) as usize..(hi as isize - dy) as usize];
                            for (r, gv) in row[lo..hi].iter_mut().zip(src) {
                                *r += wv * gv;
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }

    /// Stacked ReLU feature maps of a `bins x frames` grid.
    pub fn forward(&self, input: &[f64], bins: usize, frames: usize) -> Result<FeatureStack> {
        let mut values = self.correlate(input, bins, frames)?;
        for v in &mut values {
            *v = v.max(0.0);
        }
        Ok(FeatureStack {
            values,
            channels: self.channels(),
            bins,
            frames,
            size_offsets: self
                .blocks
                .iter()
                .map(|b| (b.size, b.channels.clone()))
                .collect(),
        })
    }

    /// Gradient over the input grid given a gradient over the feature maps and
    /// the forward output `features` (which supplies the ReLU mask).
    pub fn backward(&self, grad: &[f64], features: &FeatureStack) -> Result<Vec<f64>> {
        if grad.len() != features.values.len() {
            return Err(Error::Shape(format!(
                "feature gradient has {} values, features have {}",
                grad.len(),
                features.values.len()
            )));
        }
        let masked: Vec<f64> = grad
            .iter()
            .zip(&features.values)
            .map(|(g, f)| if *f > 0.0 { *g } else { 0.0 })
            .collect();
        self.correlate_adjoint(&masked, features.bins, features.frames)
    }
}

/// `dst[x][y] = sum_{a,b} w[a][b] * src[x + a - p][y + b - p]`, zero outside.
fn correlate_same(src: &[f64], rows: usize, cols: usize, w: &[f64], size: usize, dst: &mut [f64]) {
    let p = (size / 2) as isize;
    for x in 0..rows {
        let out_row = &mut dst[x * cols..(x + 1) * cols];
        for a in 0..size {
            let sx = x as isize + a as isize - p;
            if sx < 0 || sx >= rows as isize {
                continue;
            }
            let in_row = &src[sx as usize * cols..(sx as usize + 1) * cols];
            for b in 0..size {
                let dy = b as isize - p;
                let wv = w[a * size + b];
                let lo = (-dy).max(0) as usize;
                let hi = (cols as isize - dy).min(cols as isize) as usize;
                if lo >= hi {
                    continue;
                }
                let shifted = &in_row[(lo as isize + dy) as usize..(hi as isize + dy) as usize];
                for (o, v) in out_row[lo..hi].iter_mut().zip(shifted) {
                    *o += wv * v;
                }
            }
        }
    }
}

/// Convenience wrapper: `bank.forward` on a log-spectrogram.
pub fn conv_forward(s: &crate::tf::LogSpectrogram, bank: &FilterBank) -> Result<FeatureStack> {
    bank.forward(&s.values, s.bins, s.frames)
}

/// Convenience wrapper: recomputes the forward pass for the ReLU mask.
pub fn conv_backward(
    grad: &FeatureStack,
    s: &crate::tf::LogSpectrogram,
    bank: &FilterBank,
) -> Result<Vec<f64>> {
    let features = conv_forward(s, bank)?;
    bank.backward(&grad.values, &features)
}
