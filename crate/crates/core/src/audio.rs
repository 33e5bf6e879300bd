//! Mono audio buffers, WAV input/output and seeded white noise.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono time-domain signal.
///
/// Samples are nominally in `[-1, 1]`; they are always finite and never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidBuffer("buffer has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidBuffer("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidBuffer(format!(
                "sample {i} is not finite ({})",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| f64::max(m, s.abs()))
    }

    /// Fails unless the buffer was recorded at `expected` Hz. No resampling is attempted.
    pub fn require_sample_rate(&self, expected: u32) -> Result<()> {
        if self.sample_rate != expected {
            return Err(Error::SampleRate {
                expected,
                found: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// Sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WavEncoding {
    /// 16-bit signed PCM.
    Pcm16,
    /// 32-bit IEEE float. Lossless for samples representable as `f32`.
    #[default]
    Float32,
}

/// Reads a mono PCM or IEEE-float WAV file.
///
/// Integer PCM of `b` bits is divided by `2^(b-1)`, so full scale maps onto `[-1, 1)`.
/// Multi-channel files are rejected rather than downmixed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount {
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {format:?}"
            )))
        }
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes `buffer` as a mono WAV file.
///
/// 16-bit output rounds to the nearest step of `2^-15` and clips to the
/// representable range.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::InvalidBuffer("refusing to write an empty buffer".into()));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: buffer.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: 1,
            sample_rate: buffer.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &buffer.samples {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(wav_err)?;
            }
        }
        WavEncoding::Float32 => {
            for &s in &buffer.samples {
                writer.write_sample(s as f32).map_err(wav_err)?;
            }
        }
    }
    writer.finalize().map_err(wav_err)
}

/// I.i.d. uniform noise on `[-amplitude, amplitude]` from a ChaCha8 stream seeded with `seed`.
pub fn white_noise(length: usize, amplitude: f64, seed: u64, sample_rate: u32) -> Result<AudioBuffer> {
    if length == 0 {
        return Err(Error::InvalidBuffer("noise length must be positive".into()));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidBuffer(format!(
            "noise amplitude must be positive and finite, got {amplitude}"
        )));
    }
    AudioBuffer::new(uniform_vec(length, -amplitude, amplitude, seed), sample_rate)
}

/// `length` uniform draws on `[lo, hi]` from a ChaCha8 stream seeded with `seed`.
pub fn uniform_vec(length: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.random_range(lo..=hi)).collect()
}
