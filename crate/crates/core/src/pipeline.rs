//! Two-stage synthesis, tile extension and the border diagnostic.
//!
//! Stage one optimizes a log-spectrogram grid directly, stage two optimizes
//! raw samples. A random-phase inversion of the stage-one grid initializes
//! stage two. Extension tiles skip stage one and keep a copied prefix of the
//! previous tile frozen.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{uniform_vec, white_noise, AudioBuffer};
use crate::cnn::{FeatureStack, FilterBank};
use crate::config::SynthesisConfig;
use crate::error::{Error, Result};
use crate::optim::{lbfgs_minimize, LbfgsOptions, LbfgsResult, Termination};
use crate::params::{cross_size_mask, param_set, texture_loss_backward, PairMask, ParamSet};
use crate::tf::{random_phase_invert, Analyzer, LogSpectrogram};

/// Peak level applied when the synthesized signal would clip.
pub const NORMALIZED_PEAK: f64 = 0.97;

/// Everything needed to map a signal or a grid onto texture parameters.
#[derive(Debug, Clone)]
pub struct Engine {
    config: SynthesisConfig,
    analyzer: Analyzer,
    bank: FilterBank,
    mask: Option<PairMask>,
}

impl Engine {
    pub fn new(config: &SynthesisConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.filter_spec();
        let mask = config.cross_size_pruning.then(|| cross_size_mask(&spec));
        Ok(Self {
            analyzer: Analyzer::new(config.stft)?,
            bank: FilterBank::new(spec)?,
            mask,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn log_spectrogram(&self, signal: &[f64]) -> Result<LogSpectrogram> {
        self.analyzer.log_spectrogram(signal, self.config.compression)
    }

    pub fn params_of_grid(&self, grid: &[f64], bins: usize, frames: usize) -> Result<ParamSet> {
        let features = self.bank.forward(grid, bins, frames)?;
        param_set(&[features], self.mask.as_ref(), self.config.fingerprint())
    }

    pub fn params_of_signal(&self, signal: &[f64]) -> Result<ParamSet> {
        let s = self.log_spectrogram(signal)?;
        self.params_of_grid(&s.values, s.bins, s.frames)
    }

    fn check_target(&self, target: &ParamSet) -> Result<()> {
        let expected = self.config.fingerprint();
        if target.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: target.fingerprint.to_string(),
            });
        }
        Ok(())
    }

    /// Loss and gradient with respect to a `bins x frames` log-spectrogram grid.
    pub fn grid_loss(&self, grid: &[f64], frames: usize, target: &ParamSet) -> Result<(f64, Vec<f64>)> {
        let bins = self.config.stft.bins();
        let features = self.bank.forward(grid, bins, frames)?;
        let (loss, grad) = self.feature_loss(&features, target)?;
        let grad = self.bank.backward(&grad, &features)?;
        Ok((loss, grad))
    }

    /// Loss and gradient with respect to raw samples.
    pub fn signal_loss(&self, signal: &[f64], target: &ParamSet) -> Result<(f64, Vec<f64>)> {
        let c = self.config.compression;
        let s = self.analyzer.log_spectrogram(signal, c)?;
        let features = self.bank.forward(&s.values, s.bins, s.frames)?;
        let (loss, grad) = self.feature_loss(&features, target)?;
        let grad_s = self.bank.backward(&grad, &features)?;
        let grad_x = self.analyzer.log_spectrogram_vjp(&grad_s, signal, c)?;
        Ok((loss, grad_x))
    }

    fn feature_loss(&self, features: &FeatureStack, target: &ParamSet) -> Result<(f64, Vec<f64>)> {
        let mut lg = texture_loss_backward(std::slice::from_ref(features), target)?;
        if !lg.loss.is_finite() {
            return Err(Error::NonFinite(format!("texture loss is {}", lg.loss)));
        }
        Ok((lg.loss, lg.grads.remove(0)))
    }

    fn lbfgs_options(&self, iterations: usize, freeze_mask: Option<Vec<bool>>) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations: iterations,
            memory: self.config.lbfgs_memory,
            freeze_mask,
            ..LbfgsOptions::default()
        }
    }

    /// Stage one: optimize a log-spectrogram grid of `frames` frames from `init`.
    pub fn run_grid_stage(
        &self,
        target: &ParamSet,
        init: Vec<f64>,
        frames: usize,
        iterations: usize,
    ) -> Result<LbfgsResult> {
        self.check_target(target)?;
        let mut obj = |x: &[f64]| self.grid_loss(x, frames, target);
        lbfgs_minimize(&mut obj, &init, &self.lbfgs_options(iterations, None))
    }

    /// Stage two: optimize samples from `init`, keeping the first `frozen_prefix` samples fixed.
    pub fn run_signal_stage(
        &self,
        target: &ParamSet,
        init: Vec<f64>,
        iterations: usize,
        frozen_prefix: usize,
    ) -> Result<LbfgsResult> {
        self.check_target(target)?;
        let freeze = (frozen_prefix > 0).then(|| {
            let mut m = vec![false; init.len()];
            m[..frozen_prefix.min(init.len())].fill(true);
            m
        });
        let mut obj = |x: &[f64]| self.signal_loss(x, target);
        lbfgs_minimize(&mut obj, &init, &self.lbfgs_options(iterations, freeze))
    }

    pub fn noise_signal(&self, seed: u64) -> Result<Vec<f64>> {
        let cfg = &self.config;
        Ok(white_noise(cfg.output_length, cfg.noise_amplitude, seed, cfg.sample_rate)?.into_samples())
    }
}

/// Summary of one optimization stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    pub loss_trace: Vec<f64>,
}

impl StageSummary {
    fn from_result(name: &str, r: &LbfgsResult) -> Self {
        Self {
            name: name.into(),
            iterations: r.iterations,
            evaluations: r.evaluations,
            termination: Some(r.termination),
            loss_trace: r.loss_trace.clone(),
        }
    }

    fn skipped(name: &str) -> Self {
        Self {
            name: name.into(),
            iterations: 0,
            evaluations: 0,
            termination: None,
            loss_trace: Vec::new(),
        }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_trace.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }
}

/// Reproducibility record of a synthesis run.
///
/// Contains no wall-clock data, so identical runs serialize identically;
/// see [`StageTimings`] for timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: SynthesisConfig,
    pub fingerprint: String,
    /// SHA-256 of the target samples (or of the parameter file the target came from).
    pub target_hash: String,
    /// Loss of the plain white-noise signal the inversion competes against.
    pub noise_reference_loss: f64,
    pub stages: Vec<StageSummary>,
    /// Gain applied to keep the output peak below full scale (1.0 if none).
    pub output_gain: f64,
    pub output_length: usize,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stage(&self, name: &str) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Final loss of the last stage that ran.
    pub fn final_loss(&self) -> Option<f64> {
        self.stages.iter().rev().find_map(|s| s.final_loss())
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub analysis_secs: f64,
    pub spectral_secs: f64,
    pub inversion_secs: f64,
    pub signal_secs: f64,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub audio: AudioBuffer,
    pub manifest: RunManifest,
    pub timings: StageTimings,
}

pub fn hash_samples(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Texture parameters of `signal` under `cfg`.
pub fn extract_params(signal: &AudioBuffer, cfg: &SynthesisConfig) -> Result<ParamSet> {
    signal.require_sample_rate(cfg.sample_rate)?;
    Engine::new(cfg)?.params_of_signal(signal.samples())
}

/// Full two-stage synthesis from a target recording.
pub fn synthesize(target: &AudioBuffer, cfg: &SynthesisConfig) -> Result<Synthesis> {
    target.require_sample_rate(cfg.sample_rate)?;
    if target.len() < cfg.stft.window_length {
        return Err(Error::SignalTooShort {
            len: target.len(),
            window: cfg.stft.window_length,
        });
    }
    let engine = Engine::new(cfg)?;
    let start = Instant::now();
    let params = engine.params_of_signal(target.samples())?;
    let analysis_secs = start.elapsed().as_secs_f64();
    let mut out = synthesize_with(&engine, &params, hash_samples(target.samples()))?;
    out.timings.analysis_secs = analysis_secs;
    Ok(out)
}

/// Two-stage synthesis from pre-extracted target parameters.
pub fn synthesize_from_params(target: &ParamSet, cfg: &SynthesisConfig, target_hash: String) -> Result<Synthesis> {
    let engine = Engine::new(cfg)?;
    synthesize_with(&engine, target, target_hash)
}

fn synthesize_with(engine: &Engine, target: &ParamSet, target_hash: String) -> Result<Synthesis> {
    let cfg = engine.config().clone();
    engine.check_target(target)?;
    let mut timings = StageTimings::default();
    let mut stages = Vec::new();

    let noise = engine.noise_signal(cfg.seeds.noise)?;
    let noise_reference_loss = engine.signal_loss(&noise, target)?.0;
    debug!("white-noise reference loss {noise_reference_loss:.6}");

    let init = if cfg.stage1_iterations > 0 {
        let bins = cfg.stft.bins();
        let frames = cfg.output_frames();
        let t = Instant::now();
        let grid0 = uniform_vec(bins * frames, 0.0, 1.0, cfg.seeds.noise);
        let r1 = engine.run_grid_stage(target, grid0, frames, cfg.stage1_iterations)?;
        timings.spectral_secs = t.elapsed().as_secs_f64();
        info!(
            "spectral stage: {} iterations, loss {:.6} -> {:.6}",
            r1.iterations,
            r1.loss_trace[0],
            r1.final_loss()
        );
        stages.push(StageSummary::from_result("spectral", &r1));

        let t = Instant::now();
        let grid = LogSpectrogram {
            values: r1.x,
            bins,
            frames,
            compression: cfg.compression,
            config: cfg.stft,
        };
        let mut signal = random_phase_invert(&grid, cfg.seeds.phase)?;
        signal.resize(cfg.output_length, 0.0);
        timings.inversion_secs = t.elapsed().as_secs_f64();
        signal
    } else {
        stages.push(StageSummary::skipped("spectral"));
        noise
    };

    let t = Instant::now();
    let r2 = engine.run_signal_stage(target, init, cfg.stage2_iterations, 0)?;
    timings.signal_secs = t.elapsed().as_secs_f64();
    info!(
        "signal stage: {} iterations, loss {:.6} -> {:.6}",
        r2.iterations,
        r2.loss_trace[0],
        r2.final_loss()
    );
    stages.push(StageSummary::from_result("signal", &r2));

    let (samples, output_gain) = normalize_peak(r2.x);
    let audio = AudioBuffer::new(samples, cfg.sample_rate)?;
    Ok(Synthesis {
        manifest: RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            fingerprint: cfg.fingerprint().to_string(),
            target_hash,
            noise_reference_loss,
            stages,
            output_gain,
            output_length: audio.len(),
            config: cfg,
        },
        audio,
        timings,
    })
}

/// Scales to [`NORMALIZED_PEAK`] when the peak exceeds 1.
fn normalize_peak(mut samples: Vec<f64>) -> (Vec<f64>, f64) {
    let peak = samples.iter().fold(0.0, |m, s| f64::max(m, s.abs()));
    if peak > 1.0 {
        let gain = NORMALIZED_PEAK / peak;
        samples.iter_mut().for_each(|s| *s *= gain);
        (samples, gain)
    } else {
        (samples, 1.0)
    }
}

/// One extension tile. Its first `overlap` samples equal the last `overlap`
/// samples of the previous signal.
#[derive(Debug, Clone)]
pub struct Tile {
    pub audio: AudioBuffer,
    pub overlap: usize,
    pub stage: StageSummary,
}

impl Tile {
    /// `previous[..len - overlap]` followed by this tile.
    pub fn append_to(&self, previous: &AudioBuffer) -> Result<AudioBuffer> {
        let keep = previous.len() - self.overlap;
        let mut samples = previous.samples()[..keep].to_vec();
        samples.extend_from_slice(self.audio.samples());
        AudioBuffer::new(samples, previous.sample_rate())
    }
}

/// Synthesizes the next tile of an indefinitely long texture.
///
/// The last `cfg.overlap_len()` samples of `previous` are copied onto the
/// start of fresh white noise (seeded by `cfg.seeds.noise`) and frozen while
/// the rest is optimized against `target`. No spectral stage runs and the
/// tile is not peak-normalized, since either would disturb the copied prefix.
pub fn extend(previous: &AudioBuffer, target: &ParamSet, cfg: &SynthesisConfig) -> Result<Tile> {
    previous.require_sample_rate(cfg.sample_rate)?;
    let engine = Engine::new(cfg)?;
    engine.check_target(target)?;
    let overlap = cfg.overlap_len();
    if overlap > previous.len() {
        return Err(Error::Config(format!(
            "overlap of {overlap} samples is longer than the previous signal ({})",
            previous.len()
        )));
    }
    let mut init = engine.noise_signal(cfg.seeds.noise)?;
    init[..overlap].copy_from_slice(&previous.samples()[previous.len() - overlap..]);
    let r = engine.run_signal_stage(target, init, cfg.stage2_iterations, overlap)?;
    info!(
        "extension tile: {} iterations, loss {:.6} -> {:.6}",
        r.iterations,
        r.loss_trace[0],
        r.final_loss()
    );
    let stage = StageSummary::from_result("extension", &r);
    Ok(Tile {
        audio: AudioBuffer::new(r.x, cfg.sample_rate)?,
        overlap,
        stage,
    })
}

/// Per-frame correlation between the log-spectrogram columns of two signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderReport {
    pub frames_per_edge: usize,
    /// Frames `0..frames_per_edge` of both signals.
    pub leading: Vec<f64>,
    /// The last `frames_per_edge` frames of both signals, in time order.
    pub trailing: Vec<f64>,
    /// Index-aligned frames between the two edges.
    pub interior: Vec<f64>,
}

impl BorderReport {
    pub fn interior_mean(&self) -> f64 {
        mean(&self.interior)
    }

    pub fn leading_mean(&self) -> f64 {
        mean(&self.leading)
    }

    pub fn trailing_mean(&self) -> f64 {
        mean(&self.trailing)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Pearson correlation; a constant column correlates 1 with an identical column and 0 otherwise.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// Measures how closely the edge frames of `synthesized` follow those of `target`.
/// Each edge spans as many frames as the largest filter.
pub fn border_diagnostic(target: &AudioBuffer, synthesized: &AudioBuffer, cfg: &SynthesisConfig) -> Result<BorderReport> {
    let analyzer = Analyzer::new(cfg.stft)?;
    let a = analyzer.log_spectrogram(target.samples(), cfg.compression)?;
    let b = analyzer.log_spectrogram(synthesized.samples(), cfg.compression)?;
    let k = cfg.filter_spec().max_size().min(a.frames).min(b.frames);
    let leading = (0..k).map(|t| correlation(&a.frame(t), &b.frame(t))).collect();
    let trailing = (0..k)
        .map(|i| {
            let (ta, tb) = (a.frames - k + i, b.frames - k + i);
            correlation(&a.frame(ta), &b.frame(tb))
        })
        .collect();
    let common = a.frames.min(b.frames);
    let interior = if common > 2 * k {
        (k..common - k).map(|t| correlation(&a.frame(t), &b.frame(t))).collect()
    } else {
        Vec::new()
    };
    Ok(BorderReport {
        frames_per_edge: k,
        leading,
        trailing,
        interior,
    })
}
