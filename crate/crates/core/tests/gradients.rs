//! Analytic gradients against central finite differences and adjoint identities.

mod common;

use common::*;
use texsynth::cnn::{FeatureStack, FilterBank, FilterBankSpec};
use texsynth::params::{param_set, texture_loss, texture_loss_backward, Fingerprint};
use texsynth::tf::{stft_log_backward, stft_log_forward, Analyzer, StftConfig};
use texsynth::{Engine, SynthesisConfig};

const C: f64 = 1000.0;

fn small_bank() -> FilterBank {
    FilterBank::new(FilterBankSpec {
        sizes: vec![3, 5],
        channels_per_size: 2,
        seed: 21,
    })
    .unwrap()
}

#[test]
fn conv_backward_matches_finite_differences() {
    let (rows, cols) = (12, 16);
    let bank = small_bank();
    let s = noise(rows * cols, 0.0, 1.0, 1);
    let mut half_sq = |x: &[f64]| {
        let f = bank.forward(x, rows, cols).unwrap();
        0.5 * f.values.iter().map(|v| v * v).sum::<f64>()
    };
    let f = bank.forward(&s, rows, cols).unwrap();
    let analytic = bank.backward(&f.values, &f).unwrap();
    let numeric: Vec<f64> = (0..s.len()).map(|i| central_diff(&mut half_sq, &s, i, 1e-6)).collect();
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-6, "conv relative error {err:e}");
}

#[test]
fn conv_adjoint_identity() {
    let (rows, cols) = (12, 16);
    let bank = small_bank();
    let u = noise(rows * cols, -1.0, 1.0, 2);
    let v = noise(bank.channels() * rows * cols, -1.0, 1.0, 3);
    let lhs = dot(&bank.correlate(&u, rows, cols).unwrap(), &v);
    let rhs = dot(&u, &bank.correlate_adjoint(&v, rows, cols).unwrap());
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
}

fn check_stft_log_gradient(cfg: StftConfig, len: usize) {
    let x = noise(len, -0.3, 0.3, 4);
    let mut half_sq = |x: &[f64]| {
        let s = stft_log_forward(x, cfg, C).unwrap();
        0.5 * s.values.iter().map(|v| v * v).sum::<f64>()
    };
    let s = stft_log_forward(&x, cfg, C).unwrap();
    let grad = stft_log_backward(&s.values, &x, cfg, C).unwrap();
    let idx = sample_indices(len, 20, 5);
    let numeric: Vec<f64> = idx.iter().map(|&i| central_diff(&mut half_sq, &x, i, 1e-5)).collect();
    let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-6, "stft-log relative error {err:e} for {cfg:?}");
}

#[test]
fn stft_log_backward_matches_finite_differences() {
    check_stft_log_gradient(StftConfig::default(), 4096);
    check_stft_log_gradient(StftConfig::new(64, 32).unwrap(), 1024);
}

#[test]
fn stft_log_adjoint_identity() {
    for (cfg, len) in [(StftConfig::default(), 4096), (StftConfig::new(64, 32).unwrap(), 1000)] {
        let a = Analyzer::new(cfg).unwrap();
        let x = noise(len, -0.3, 0.3, 6);
        let u = noise(len, -1.0, 1.0, 7);
        let frames = cfg.frames(len).unwrap();
        let v = noise(cfg.bins() * frames, -1.0, 1.0, 8);
        let lhs = dot(&a.log_spectrogram_jvp(&x, &u, C).unwrap(), &v);
        let rhs = dot(&u, &a.log_spectrogram_vjp(&v, &x, C).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let cfg = StftConfig::default();
    let x = noise(2048, -0.3, 0.3, 9);
    let frames = cfg.frames(2048).unwrap();
    let g = stft_log_backward(&vec![0.0; cfg.bins() * frames], &x, cfg, C).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
}

#[test]
fn texture_loss_backward_matches_finite_differences() {
    let (c, rows, cols) = (2, 4, 4);
    let fp = Fingerprint([3; 32]);
    let target_values = noise(c * rows * cols, 0.0, 1.0, 10);
    let target = param_set(
        &[FeatureStack::from_raw(target_values, c, rows, cols).unwrap()],
        None,
        fp,
    )
    .unwrap();
    let f0 = noise(c * rows * cols, 0.0, 1.0, 11);
    let mut loss = |v: &[f64]| {
        let f = FeatureStack::from_raw(v.to_vec(), c, rows, cols).unwrap();
        texture_loss(&param_set(&[f], None, fp).unwrap(), &target).unwrap()
    };
    let stack = FeatureStack::from_raw(f0.clone(), c, rows, cols).unwrap();
    let g = texture_loss_backward(&[stack], &target).unwrap();
    assert!((g.loss - loss(&f0)).abs() < 1e-14);
    let numeric: Vec<f64> = (0..f0.len()).map(|i| central_diff(&mut loss, &f0, i, 1e-6)).collect();
    let err = rel_err(&g.grads[0], &numeric);
    assert!(err <= 1e-6, "texture loss relative error {err:e}");
}

#[test]
fn end_to_end_signal_gradient() {
    let cfg = SynthesisConfig {
        filter_sizes: vec![3, 5, 7],
        channels_per_size: 3,
        output_length: 4096,
        ..SynthesisConfig::desk()
    };
    let engine = Engine::new(&cfg).unwrap();
    let target = engine.params_of_signal(&noise(4096, -0.5, 0.5, 12)).unwrap();
    let x = noise(4096, -0.1, 0.1, 13);
    let (_, grad) = engine.signal_loss(&x, &target).unwrap();
    let mut loss = |v: &[f64]| engine.signal_loss(v, &target).unwrap().0;
    let idx = sample_indices(4096, 20, 14);
    let numeric: Vec<f64> = idx.iter().map(|&i| central_diff(&mut loss, &x, i, 1e-6)).collect();
    let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-4, "end-to-end relative error {err:e}");
}
