//! Short-time Fourier analysis, log compression and their adjoints.
//!
//! Every time-frequency grid is stored row-major with frequency on the first
//! axis and time on the second: entry `(f, t)` lives at `f * frames + t`.
//! Framing is non-centered, so a signal of `n` samples yields
//! `(n - window_length) / hop + 1` frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Smoothing term inside the magnitude, `|z| = sqrt(re^2 + im^2 + EPS^2)`.
pub const MAGNITUDE_EPS: f64 = 1e-12;

/// Overlap-add envelope values below this fraction of the envelope maximum are
/// clamped before division. Only the first and last half-window are affected.
pub const ENVELOPE_FLOOR: f64 = 0.1;

/// Frame layout of the analysis. The window is always a periodic Hann window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize) -> Result<Self> {
        let cfg = Self { window_length, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 || !self.window_length.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window length must be even and at least 2, got {}",
                self.window_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.window_length, self.hop
            )));
        }
        // constant overlap-add of the analysis window
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).sum())
            .collect();
        let hi = sums.iter().cloned().fold(f64::MIN, f64::max);
        let lo = sums.iter().cloned().fold(f64::MAX, f64::min);
        if hi - lo > 1e-9 * hi {
            return Err(Error::Config(format!(
                "window {} with hop {} is not constant-overlap-add",
                self.window_length, self.hop
            )));
        }
        Ok(())
    }

    /// Periodic Hann taps, `0.5 - 0.5 cos(2 pi n / N)`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Frame count for a signal of `len` samples, or `None` if it is shorter than a window.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.window_length).then(|| (len - self.window_length) / self.hop + 1)
    }

    /// Signal length produced by overlap-adding `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.window_length
    }
}

/// Complex STFT coefficients, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Vec<Complex64>,
    pub bins: usize,
    pub frames: usize,
    pub config: StftConfig,
}

/// Non-negative magnitudes, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub config: StftConfig,
}

/// Log-compressed magnitudes `log(1 + C x) / log(1 + C)`.
///
/// Values produced from magnitudes in `[0, 1]` lie in `[0, 1]`; during
/// spectral optimization they are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpectrogram {
    pub values: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub compression: f64,
    pub config: StftConfig,
}

impl LogSpectrogram {
    pub fn zeros(bins: usize, frames: usize, compression: f64, config: StftConfig) -> Self {
        Self {
            values: vec![0.0; bins * frames],
            bins,
            frames,
            compression,
            config,
        }
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> f64 {
        self.values[f * self.frames + t]
    }

    /// Column `t` (one time frame across all bins).
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.bins).map(|f| self.get(f, t)).collect()
    }
}

/// Window and FFT plans for one [`StftConfig`], reusable across calls.
#[derive(Clone)]
pub struct Analyzer {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Analyzer {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window(),
            forward: planner.plan_fft_forward(config.window_length),
            inverse: planner.plan_fft_inverse(config.window_length),
            config,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn stft(&self, signal: &[f64]) -> Result<ComplexSpectrogram> {
        let cfg = self.config;
        let frames = cfg.frames(signal.len()).ok_or(Error::SignalTooShort {
            len: signal.len(),
            window: cfg.window_length,
        })?;
        let bins = cfg.bins();
        let columns = par::map_range(frames, |t| {
            let start = t * cfg.hop;
            let mut buf: Vec<Complex64> = signal[start..start + cfg.window_length]
                .iter()
                .zip(&self.window)
                .map(|(x, w)| Complex64::new(x * w, 0.0))
                .collect();
            self.forward.process(&mut buf);
            buf.truncate(bins);
            buf
        });
        let mut values = vec![Complex64::new(0.0, 0.0); bins * frames];
        for (t, col) in columns.iter().enumerate() {
            for (f, z) in col.iter().enumerate() {
                values[f * frames + t] = *z;
            }
        }
        Ok(ComplexSpectrogram {
            values,
            bins,
            frames,
            config: cfg,
        })
    }

    /// Weighted overlap-add inverse, normalized by the summed squared window.
    pub fn istft(&self, grid: &ComplexSpectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        let n = cfg.window_length;
        if grid.bins != cfg.bins() || grid.values.len() != grid.bins * grid.frames {
            return Err(Error::Shape(format!(
                "istft expects {} bins, grid has {} bins and {} values",
                cfg.bins(),
                grid.bins,
                grid.values.len()
            )));
        }
        let frames = grid.frames;
        let scale = 1.0 / n as f64;
        let blocks = par::map_range(frames, |t| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..grid.bins {
                let z = grid.values[k * frames + t];
                buf[k] = z;
                if k > 0 && k < n / 2 {
                    buf[n - k] = z.conj();
                }
            }
            // DC and Nyquist of a real frame are real
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            self.inverse.process(&mut buf);
            buf.iter()
                .zip(&self.window)
                .map(|(z, w)| z.re * scale * w)
                .collect::<Vec<f64>>()
        });
        let len = cfg.signal_len(frames);
        let mut out = vec![0.0; len];
        let mut envelope = vec![0.0; len];
        for (t, block) in blocks.iter().enumerate() {
            let start = t * cfg.hop;
            for (i, (b, w)) in block.iter().zip(&self.window).enumerate() {
                out[start + i] += b;
                envelope[start + i] += w * w;
            }
        }
        let floor = ENVELOPE_FLOOR * envelope.iter().cloned().fold(0.0, f64::max);
        for (o, e) in out.iter_mut().zip(&envelope) {
            *o /= e.max(floor);
        }
        Ok(out)
    }

    /// `log(1 + C |STFT(x)|) / log(1 + C)` with the smoothed magnitude.
    pub fn log_spectrogram(&self, signal: &[f64], compression: f64) -> Result<LogSpectrogram> {
        check_compression(compression)?;
        let spec = magnitude(&self.stft(signal)?);
        log_compress(&spec, compression)
    }

    /// Vector-Jacobian product of [`Analyzer::log_spectrogram`]: maps a gradient over
    /// the `bins x frames` grid onto a gradient over the signal samples.
    pub fn log_spectrogram_vjp(
        &self,
        grad: &[f64],
        signal: &[f64],
        compression: f64,
    ) -> Result<Vec<f64>> {
        check_compression(compression)?;
        let cfg = self.config;
        let z = self.stft(signal)?;
        let (bins, frames, n) = (z.bins, z.frames, cfg.window_length);
        if grad.len() != bins * frames {
            return Err(Error::Shape(format!(
                "gradient has {} entries, log-spectrogram has {bins}x{frames}",
                grad.len()
            )));
        }
        let denom = (1.0 + compression).ln();
        let blocks = par::map_range(frames, |t| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..bins {
                let zk = z.values[k * frames + t];
                let m = smoothed_abs(zk);
                let g_mag = grad[k * frames + t] * compression / ((1.0 + compression * m) * denom);
                buf[k] = zk * (g_mag / m);
            }
            // Re sum_k G_k e^{+i 2 pi k n / N} over the one-sided bins
            self.inverse.process(&mut buf);
            buf.iter()
                .zip(&self.window)
                .map(|(z, w)| z.re * w)
                .collect::<Vec<f64>>()
        });
        let mut out = vec![0.0; signal.len()];
        for (t, block) in blocks.iter().enumerate() {
            let start = t * cfg.hop;
            for (o, b) in out[start..start + n].iter_mut().zip(block) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Jacobian-vector product of [`Analyzer::log_spectrogram`] at `signal` along `direction`.
    pub fn log_spectrogram_jvp(
        &self,
        signal: &[f64],
        direction: &[f64],
        compression: f64,
    ) -> Result<Vec<f64>> {
        check_compression(compression)?;
        if signal.len() != direction.len() {
            return Err(Error::Shape("signal and direction lengths differ".into()));
        }
        let z = self.stft(signal)?;
        let dz = self.stft(direction)?;
        let denom = (1.0 + compression).ln();
        Ok(z.values
            .iter()
            .zip(&dz.values)
            .map(|(z, d)| {
                let m = smoothed_abs(*z);
                let dm = (z.re * d.re + z.im * d.im) / m;
                compression / ((1.0 + compression * m) * denom) * dm
            })
            .collect())
    }
}

#[inline]
fn smoothed_abs(z: Complex64) -> f64 {
    (z.re * z.re + z.im * z.im + MAGNITUDE_EPS * MAGNITUDE_EPS).sqrt()
}

fn check_compression(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "compression factor must be positive and finite, got {c}"
        )))
    }
}

pub fn stft(signal: &[f64], config: StftConfig) -> Result<ComplexSpectrogram> {
    Analyzer::new(config)?.stft(signal)
}

pub fn istft(grid: &ComplexSpectrogram) -> Result<Vec<f64>> {
    Analyzer::new(grid.config)?.istft(grid)
}

/// Elementwise smoothed magnitude.
pub fn magnitude(grid: &ComplexSpectrogram) -> Spectrogram {
    Spectrogram {
        values: grid.values.iter().map(|z| smoothed_abs(*z)).collect(),
        bins: grid.bins,
        frames: grid.frames,
        config: grid.config,
    }
}

pub fn log_compress(x: &Spectrogram, compression: f64) -> Result<LogSpectrogram> {
    check_compression(compression)?;
    let denom = (1.0 + compression).ln();
    Ok(LogSpectrogram {
        values: x
            .values
            .iter()
            .map(|v| (compression * v).ln_1p() / denom)
            .collect(),
        bins: x.bins,
        frames: x.frames,
        compression,
        config: x.config,
    })
}

/// Inverse of [`log_compress`]. Negative entries are clamped to zero first.
///
/// Small entries use `exp_m1` for accuracy; larger ones use `powf`, which
/// maps `1` back to exactly `1`.
pub fn log_decompress(s: &LogSpectrogram) -> Spectrogram {
    let c = s.compression;
    let denom = (1.0 + c).ln();
    Spectrogram {
        values: s
            .values
            .iter()
            .map(|&v| {
                let v = v.max(0.0);
                if v < 0.5 {
                    (v * denom).exp_m1() / c
                } else {
                    ((1.0 + c).powf(v) - 1.0) / c
                }
            })
            .collect(),
        bins: s.bins,
        frames: s.frames,
        config: s.config,
    }
}

/// Decompresses `s`, attaches i.i.d. uniform phases on `[0, 2 pi)` and inverts.
///
/// Phases are drawn in row-major grid order from a ChaCha8 stream seeded with `seed`.
pub fn random_phase_invert(s: &LogSpectrogram, seed: u64) -> Result<Vec<f64>> {
    let mag = log_decompress(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = mag
        .values
        .iter()
        .map(|&m| Complex64::from_polar(m, rng.random_range(0.0..2.0 * PI)))
        .collect();
    istft(&ComplexSpectrogram {
        values,
        bins: s.bins,
        frames: s.frames,
        config: s.config,
    })
}

pub fn stft_log_forward(signal: &[f64], config: StftConfig, compression: f64) -> Result<LogSpectrogram> {
    Analyzer::new(config)?.log_spectrogram(signal, compression)
}

pub fn stft_log_backward(
    grad: &[f64],
    signal: &[f64],
    config: StftConfig,
    compression: f64,
) -> Result<Vec<f64>> {
    Analyzer::new(config)?.log_spectrogram_vjp(grad, signal, compression)
}
