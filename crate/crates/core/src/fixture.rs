//! Seeded synthetic textures for tests, benches and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::Result;

/// Rain-like texture: low-passed noise bed, many short decaying droplets and
/// an occasional upward chirp standing out of the background. Peak is 0.9.
pub fn rain_texture(length: usize, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let mut out = vec![0.0; length];

    let mut state = 0.0;
    for o in out.iter_mut() {
        state = 0.92 * state + 0.08 * rng.random_range(-1.0..1.0);
        *o = 0.6 * state;
    }

    let droplet_rate = 120.0 / sr;
    for start in 0..length {
        if rng.random::<f64>() >= droplet_rate {
            continue;
        }
        let freq = rng.random_range(900.0..5500.0);
        let decay = rng.random_range(0.004..0.02) * sr;
        let amp = rng.random_range(0.05..0.35);
        let phase = rng.random_range(0.0..2.0 * PI);
        let len = (decay * 6.0) as usize;
        for (i, o) in out[start..(start + len).min(length)].iter_mut().enumerate() {
            let t = i as f64;
            *o += amp * (-t / decay).exp() * (2.0 * PI * freq * t / sr + phase).sin();
        }
    }

    let chirp_len = (0.08 * sr) as usize;
    let mut start = (rng.random_range(0.1..0.4) * sr) as usize;
    while start + chirp_len < length {
        let f0 = rng.random_range(1800.0..3000.0);
        let mut phase = 0.0;
        for i in 0..chirp_len {
            let u = i as f64 / chirp_len as f64;
            phase += 2.0 * PI * f0 * (1.0 + 0.6 * u) / sr;
            let env = (PI * u).sin().powi(2);
            out[start + i] += 0.25 * env * phase.sin();
        }
        start += (rng.random_range(0.35..0.8) * sr) as usize;
    }

    let peak = out.iter().fold(0.0, |m, s| f64::max(m, s.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|s| *s *= 0.9 / peak);
    }
    AudioBuffer::new(out, sample_rate)
}
