//! Synthesis configuration and the pipeline fingerprint.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::FilterBankSpec;
use crate::error::{Error, Result};
use crate::params::Fingerprint;
use crate::tf::StftConfig;

/// Seeds for every random draw of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// White-noise initializations (spectral grid and time signal).
    pub noise: u64,
    /// Filter-bank weights.
    pub filters: u64,
    /// Random phases of the spectral-to-signal inversion.
    pub phase: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            noise: 1,
            filters: 2,
            phase: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    /// Log compression factor `C`.
    pub compression: f64,
    pub filter_sizes: Vec<usize>,
    pub channels_per_size: usize,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    /// Length of the synthesized signal (and of each extension tile), in samples.
    pub output_length: usize,
    pub seeds: Seeds,
    /// Drop correlations between filters of different sizes.
    pub cross_size_pruning: bool,
    /// Fraction of `output_length` copied into the next tile, rounded to whole hops.
    pub overlap_fraction: f64,
    /// Amplitude of the uniform white-noise signal initialization.
    pub noise_amplitude: f64,
    pub lbfgs_memory: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let filters = FilterBankSpec::default();
        Self {
            sample_rate: 22050,
            stft: StftConfig::default(),
            compression: 1000.0,
            filter_sizes: filters.sizes,
            channels_per_size: filters.channels_per_size,
            stage1_iterations: 1000,
            stage2_iterations: 10000,
            output_length: 262_400,
            seeds: Seeds::default(),
            cross_size_pruning: false,
            overlap_fraction: 0.1,
            noise_amplitude: 0.1,
            lbfgs_memory: 10,
        }
    }
}

/// Named configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Full-size configuration.
    Default,
    /// Two-second output, filters {3, 5, 7} x 16, 200 + 500 iterations.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

impl SynthesisConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Default => Self::default(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn desk() -> Self {
        Self {
            filter_sizes: vec![3, 5, 7],
            channels_per_size: 16,
            stage1_iterations: 200,
            stage2_iterations: 500,
            output_length: 44_100,
            ..Self::default()
        }
    }

    pub fn filter_spec(&self) -> FilterBankSpec {
        FilterBankSpec {
            sizes: self.filter_sizes.clone(),
            channels_per_size: self.channels_per_size,
            seed: self.seeds.filters,
        }
    }

    /// Frames of the synthesized log-spectrogram.
    pub fn output_frames(&self) -> usize {
        self.stft.frames(self.output_length).unwrap_or(0)
    }

    /// Samples copied from one tile into the next.
    pub fn overlap_len(&self) -> usize {
        let hops = (self.overlap_fraction * self.output_length as f64 / self.stft.hop as f64).round();
        hops as usize * self.stft.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        self.stft.validate()?;
        self.filter_spec().validate()?;
        if !(self.compression > 0.0 && self.compression.is_finite()) {
            return Err(Error::Config(format!(
                "compression must be positive, got {}",
                self.compression
            )));
        }
        if self.output_length < self.stft.window_length {
            return Err(Error::Config(format!(
                "output length {} is shorter than one window ({})",
                self.output_length, self.stft.window_length
            )));
        }
        let largest = self.filter_spec().max_size();
        if self.output_frames() < largest || self.stft.bins() < largest {
            return Err(Error::Config(format!(
                "output grid {}x{} is smaller than the largest filter ({largest})",
                self.stft.bins(),
                self.output_frames()
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction must be in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        if self.overlap_len() >= self.output_length {
            return Err(Error::Config("overlap covers the whole tile".into()));
        }
        if !(self.noise_amplitude > 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "noise amplitude must be positive, got {}",
                self.noise_amplitude
            )));
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::Config("l-bfgs memory must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash of every setting that changes the extracted parameters.
    pub fn fingerprint(&self) -> Fingerprint {
        let sizes: Vec<String> = self.filter_sizes.iter().map(|s| s.to_string()).collect();
        let canonical = format!(
            "texsynth-params/1;sr={};win={};hop={};window=hann-periodic;compression={:016x};\
             sizes={};channels={};filter_seed={};weights=he-normal;prune={};layers=1",
            self.sample_rate,
            self.stft.window_length,
            self.stft.hop,
            self.compression.to_bits(),
            sizes.join(","),
            self.channels_per_size,
            self.seeds.filters,
            self.cross_size_pruning,
        );
        Fingerprint(Sha256::digest(canonical.as_bytes()).into())
    }
}
