#![allow(dead_code)]

use texsynth::audio::uniform_vec;

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// `|a - b| / |b|` over the given vectors.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn noise(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    uniform_vec(n, lo, hi, seed)
}

/// Distinct indices in `0..n`, spread deterministically.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut picks: Vec<usize> = noise(count * 4, 0.0, 1.0, seed)
        .into_iter()
        .map(|u| ((u * n as f64) as usize).min(n - 1))
        .collect();
    picks.sort_unstable();
    picks.dedup();
    picks.truncate(count);
    picks
}

/// Same-padded cross-correlation, written as six nested loops with explicit bounds checks.
pub fn brute_correlate(
    input: &[f64],
    rows: usize,
    cols: usize,
    filter: &[f64],
    size: usize,
) -> Vec<f64> {
    let pad = (size / 2) as i64;
    let mut out = vec![0.0; rows * cols];
    for x in 0..rows as i64 {
        for y in 0..cols as i64 {
            let mut acc = 0.0;
            for a in 0..size as i64 {
                for b in 0..size as i64 {
                    let (sx, sy) = (x + a - pad, y + b - pad);
                    if sx >= 0 && sx < rows as i64 && sy >= 0 && sy < cols as i64 {
                        acc += filter[(a * size as i64 + b) as usize]
                            * input[(sx * cols as i64 + sy) as usize];
                    }
                }
            }
            out[(x * cols as i64 + y) as usize] = acc;
        }
    }
    out
}

/// `H(i, j, x)` by direct triple loop over a `channels x rows x cols` stack.
pub fn brute_gram_tensor(values: &[f64], channels: usize, rows: usize, cols: usize) -> Vec<f64> {
    let at = |c: usize, x: usize, y: usize| values[(c * rows + x) * cols + y];
    let mut out = vec![0.0; channels * channels * rows];
    for i in 0..channels {
        for j in 0..channels {
            for x in 0..rows {
                let mut acc = 0.0;
                for y in 0..cols {
                    acc += at(i, x, y) * at(j, x, y);
                }
                out[(i * channels + j) * rows + x] = acc;
            }
        }
    }
    out
}
