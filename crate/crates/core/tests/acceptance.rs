//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//!     cargo test --release -p texsynth --test acceptance

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use texsynth::cnn::{FeatureStack, FilterBank};
use texsynth::container::write_params;
use texsynth::fixture::rain_texture;
use texsynth::optim::{lbfgs_minimize, LbfgsOptions};
use texsynth::params::{
    gram_matrix, gram_tensor, param_set, texture_loss, texture_loss_backward, Fingerprint,
};
use texsynth::pipeline::Synthesis;
use texsynth::tf::{
    log_compress, log_decompress, stft_log_backward, stft_log_forward, Analyzer, Spectrogram,
    StftConfig,
};
use texsynth::{
    extend, extract_params, synthesize, write_wav, AudioBuffer, Engine, FilterBankSpec,
    ParamCounts, SynthesisConfig, WavEncoding,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

fn shape_reproduction() -> Outcome {
    let x = noise(262_400, -0.5, 0.5, 1);
    let s = stft_log_forward(&x, StftConfig::default(), 1000.0).map_err(|e| e.to_string())?;
    check(
        (s.bins, s.frames) == (257, 1024),
        format!("262400 samples -> {}x{} log-spectrogram", s.bins, s.frames),
    )
}

fn parameter_counts() -> Outcome {
    let c = ParamCounts::new(&FilterBankSpec::default(), 257);
    check(
        c.unordered_entries == 134_873_600 && c.pruned_entries == 16_974_336,
        format!(
            "{} unordered-pair entries ({:.2e}), {} with cross-size pruning ({:.2e})",
            c.unordered_entries, c.unordered_entries as f64, c.pruned_entries, c.pruned_entries as f64
        ),
    )
}

fn compression_fixed_points() -> Outcome {
    let cfg = StftConfig::default();
    let mut values = vec![0.0, 1.0];
    values.extend(noise(10_000, 0.0, 1.0, 3));
    let x = Spectrogram {
        bins: values.len(),
        frames: 1,
        values,
        config: cfg,
    };
    let s = log_compress(&x, 1000.0).map_err(|e| e.to_string())?;
    let back = log_decompress(&s);
    let err = max_abs_diff(&back.values, &x.values);
    check(
        s.values[0] == 0.0 && s.values[1] == 1.0 && err <= 1e-9,
        format!("0 -> {}, 1 -> {}, round-trip error {err:.1e}", s.values[0], s.values[1]),
    )
}

fn gram_marginalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (c, rows, cols) = (2 + seed as usize % 4, 7 + seed as usize, 11);
        let f = FeatureStack::from_raw(noise(c * rows * cols, 0.0, 1.0, 40 + seed), c, rows, cols)
            .map_err(|e| e.to_string())?;
        let h = gram_tensor(&f, None).map_err(|e| e.to_string())?;
        let g = gram_matrix(&f);
        for i in 0..c {
            for j in 0..c {
                let s: f64 = (0..rows).map(|x| h.get(i, j, x)).sum();
                worst = worst.max((s - g.get(i, j)).abs() / g.get(i, j).abs());
            }
        }
    }
    check(worst <= 1e-10, format!("largest relative gap {worst:.1e} over 10 stacks"))
}

fn gradient_suite() -> Outcome {
    let e = |e: texsynth::Error| e.to_string();

    let (rows, cols) = (12, 16);
    let bank = FilterBank::new(FilterBankSpec {
        sizes: vec![3, 5],
        channels_per_size: 2,
        seed: 5,
    })
    .map_err(e)?;
    let s = noise(rows * cols, 0.0, 1.0, 50);
    let f = bank.forward(&s, rows, cols).map_err(e)?;
    let analytic = bank.backward(&f.values, &f).map_err(e)?;
    let mut conv = |x: &[f64]| {
        let f = bank.forward(x, rows, cols).unwrap();
        0.5 * f.values.iter().map(|v| v * v).sum::<f64>()
    };
    let numeric: Vec<f64> = (0..s.len()).map(|i| central_diff(&mut conv, &s, i, 1e-6)).collect();
    let conv_err = rel_err(&analytic, &numeric);

    let cfg = StftConfig::default();
    let x = noise(4096, -0.3, 0.3, 51);
    let sl = stft_log_forward(&x, cfg, 1000.0).map_err(e)?;
    let grad = stft_log_backward(&sl.values, &x, cfg, 1000.0).map_err(e)?;
    let mut chain = |x: &[f64]| {
        let s = stft_log_forward(x, cfg, 1000.0).unwrap();
        0.5 * s.values.iter().map(|v| v * v).sum::<f64>()
    };
    let idx = sample_indices(4096, 20, 52);
    let numeric: Vec<f64> = idx.iter().map(|&i| central_diff(&mut chain, &x, i, 1e-5)).collect();
    let picked: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
    let stft_err = rel_err(&picked, &numeric);

    let fp = Fingerprint([0; 32]);
    let target = param_set(
        &[FeatureStack::from_raw(noise(32, 0.0, 1.0, 53), 2, 4, 4).map_err(e)?],
        None,
        fp,
    )
    .map_err(e)?;
    let f0 = noise(32, 0.0, 1.0, 54);
    let lg = texture_loss_backward(&[FeatureStack::from_raw(f0.clone(), 2, 4, 4).map_err(e)?], &target)
        .map_err(e)?;
    let mut loss = |v: &[f64]| {
        let f = FeatureStack::from_raw(v.to_vec(), 2, 4, 4).unwrap();
        texture_loss(&param_set(&[f], None, fp).unwrap(), &target).unwrap()
    };
    let numeric: Vec<f64> = (0..32).map(|i| central_diff(&mut loss, &f0, i, 1e-6)).collect();
    let loss_err = rel_err(&lg.grads[0], &numeric);

    let cfg = SynthesisConfig {
        output_length: 4096,
        ..SynthesisConfig::desk()
    };
    let engine = Engine::new(&cfg).map_err(e)?;
    let target = engine.params_of_signal(&noise(4096, -0.5, 0.5, 55)).map_err(e)?;
    let x = noise(4096, -0.1, 0.1, 56);
    let (_, grad) = engine.signal_loss(&x, &target).map_err(e)?;
    let mut full = |v: &[f64]| engine.signal_loss(v, &target).unwrap().0;
    let idx = sample_indices(4096, 20, 57);
    let numeric: Vec<f64> = idx.iter().map(|&i| central_diff(&mut full, &x, i, 1e-6)).collect();
    let picked: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
    let full_err = rel_err(&picked, &numeric);

    check(
        conv_err <= 1e-6 && stft_err <= 1e-6 && loss_err <= 1e-6 && full_err <= 1e-4,
        format!(
            "relative errors: conv {conv_err:.1e}, stft-log {stft_err:.1e}, loss {loss_err:.1e}, end-to-end {full_err:.1e}"
        ),
    )
}

fn brute_force_oracles() -> Outcome {
    let mut worst_conv: f64 = 0.0;
    let mut worst_gram: f64 = 0.0;
    let mut instances = 0;
    for rows in 5..=10 {
        for cols in 5..=10 {
            let seed = (rows * 16 + cols) as u64;
            let w3 = noise(18, -1.0, 1.0, seed);
            let w5 = noise(50, -1.0, 1.0, seed + 500);
            let bank = FilterBank::from_weights(vec![(3, w3.clone()), (5, w5.clone())])
                .map_err(|e| e.to_string())?;
            let input = noise(rows * cols, 0.0, 1.0, seed + 1000);
            let f = bank.forward(&input, rows, cols).map_err(|e| e.to_string())?;
            for (c, (w, size)) in [(&w3[..9], 3), (&w3[9..], 3), (&w5[..25], 5), (&w5[25..], 5)]
                .into_iter()
                .enumerate()
            {
                let oracle: Vec<f64> = brute_correlate(&input, rows, cols, w, size)
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect();
                worst_conv = worst_conv.max(max_abs_diff(f.channel(c), &oracle));
            }
            let h = gram_tensor(&f, None).map_err(|e| e.to_string())?;
            worst_gram = worst_gram.max(max_abs_diff(&h.values, &brute_gram_tensor(&f.values, 4, rows, cols)));
            instances += 1;
        }
    }
    check(
        worst_conv <= 1e-12 && worst_gram <= 1e-12,
        format!("{instances} instances up to 10x10 with 4 channels: conv {worst_conv:.1e}, gram {worst_gram:.1e}"),
    )
}

fn optimizer() -> Outcome {
    let n = 50;
    let mut a = noise(n * n, -0.5, 0.5, 60);
    for i in 0..n {
        a[i * n + i] += 3.0;
    }
    let b = noise(n, -1.0, 1.0, 61);
    let quad = |x: &[f64]| {
        let r: Vec<f64> = (0..n).map(|i| dot(&a[i * n..(i + 1) * n], x) - b[i]).collect();
        let g: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i * n + j] * r[i]).sum()).collect();
        (0.5 * dot(&r, &r), g)
    };
    let opts = LbfgsOptions {
        max_iterations: 200,
        grad_tolerance: 1e-12,
        ..Default::default()
    };
    let mut obj = |x: &[f64]| Ok(quad(x));
    let rq = lbfgs_minimize(&mut obj, &vec![0.0; n], &opts).map_err(|e| e.to_string())?;
    let gnorm = dot(&quad(&rq.x).1, &quad(&rq.x).1).sqrt();

    let mut rosen = |x: &[f64]| {
        let (p, q) = (x[0], x[1]);
        Ok((
            (1.0 - p).powi(2) + 100.0 * (q - p * p).powi(2),
            vec![-2.0 * (1.0 - p) - 400.0 * p * (q - p * p), 200.0 * (q - p * p)],
        ))
    };
    let opts = LbfgsOptions {
        max_iterations: 500,
        grad_tolerance: 1e-14,
        ..Default::default()
    };
    let rr = lbfgs_minimize(&mut rosen, &[-1.2, 1.0], &opts).map_err(|e| e.to_string())?;
    let rdist = (rr.x[0] - 1.0).abs().max((rr.x[1] - 1.0).abs());

    let x0 = noise(n, -2.0, 2.0, 62);
    let opts = LbfgsOptions {
        max_iterations: 100,
        freeze_mask: Some((0..n).map(|i| i < n / 2).collect()),
        ..Default::default()
    };
    let mut obj = |x: &[f64]| Ok(quad(x));
    let rm = lbfgs_minimize(&mut obj, &x0, &opts).map_err(|e| e.to_string())?;
    let frozen_exact = (0..n / 2).all(|i| rm.x[i].to_bits() == x0[i].to_bits());

    let monotone = [&rq, &rr, &rm]
        .iter()
        .all(|r| r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    check(
        gnorm < 1e-8 && rq.iterations <= 200 && rdist <= 1e-6 && monotone && frozen_exact,
        format!(
            "quadratic |g| {gnorm:.1e} after {} iterations, Rosenbrock distance {rdist:.1e}, traces non-increasing {monotone}, frozen bit-exact {frozen_exact}",
            rq.iterations
        ),
    )
}

fn cola_reconstruction() -> Outcome {
    let cfg = StftConfig::default();
    let a = Analyzer::new(cfg).map_err(|e| e.to_string())?;
    let n = 262_400;
    let x = noise(n, -1.0, 1.0, 70);
    let y = a.istft(&a.stft(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let w = cfg.window_length;
    let err = max_abs_diff(&y[w..n - w], &x[w..n - w]);
    check(err <= 1e-6, format!("interior max error {err:.1e}"))
}

struct DeskRuns {
    target: AudioBuffer,
    runs: Vec<(u64, Synthesis, f64)>,
}

fn desk_synthesis(desk: &mut Option<DeskRuns>) -> Outcome {
    let cfg = SynthesisConfig::desk();
    let target = rain_texture(cfg.output_length, cfg.sample_rate, 7).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    let (mut ratio_sum, mut inversion_ok, mut worst_secs) = (0.0, true, 0.0f64);
    for seed in 1..=3u64 {
        let mut c = cfg.clone();
        c.seeds.noise = seed;
        let t = Instant::now();
        let out = synthesize(&target, &c).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        worst_secs = worst_secs.max(secs);
        let m = &out.manifest;
        let noise_loss = m.noise_reference_loss;
        let spectral = m.stage("spectral").and_then(|s| s.final_loss()).unwrap_or(f64::NAN);
        let inverted = m.stage("signal").and_then(|s| s.initial_loss()).unwrap_or(f64::NAN);
        let fin = m.final_loss().unwrap_or(f64::NAN);
        ratio_sum += fin / noise_loss;
        inversion_ok &= inverted < noise_loss;
        lines.push(format!(
            "seed {seed}: noise {noise_loss:.4}, spectral {spectral:.5}, inverted {inverted:.4}, final {fin:.5} ({:.1}%), {secs:.0}s",
            100.0 * fin / noise_loss
        ));
        runs.push((seed, out, secs));
    }
    let mean_ratio = ratio_sum / 3.0;
    *desk = Some(DeskRuns { target, runs });
    check(
        mean_ratio <= 0.1 && inversion_ok && worst_secs <= 600.0,
        format!(
            "mean final/noise {:.2}%, inversion below noise {inversion_ok}, slowest run {worst_secs:.0}s\n        {}",
            100.0 * mean_ratio,
            lines.join("\n        ")
        ),
    )
}

fn extension_contract(desk: &Option<DeskRuns>) -> Outcome {
    let desk = desk.as_ref().ok_or("desk-scale runs unavailable")?;
    let (_, first, first_secs) = &desk.runs[0];
    let cfg = first.manifest.config.clone();
    let params = extract_params(&desk.target, &cfg).map_err(|e| e.to_string())?;
    let overlap = cfg.overlap_len();

    let tiles = 3;
    let mut whole = first.audio.clone();
    let mut previous = first.audio.clone();
    let (mut prefix_exact, mut losses) = (true, Vec::new());
    let t = Instant::now();
    for k in 1..=tiles {
        let mut c = cfg.clone();
        c.seeds.noise = cfg.seeds.noise + k;
        let tile = extend(&previous, &params, &c).map_err(|e| e.to_string())?;
        let tail = &previous.samples()[previous.len() - overlap..];
        prefix_exact &= tile.audio.samples()[..overlap]
            .iter()
            .zip(tail)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        losses.push(tile.stage.final_loss().unwrap_or(f64::NAN));
        whole = tile.append_to(&whole).map_err(|e| e.to_string())?;
        previous = tile.audio;
    }
    let tile_secs = t.elapsed().as_secs_f64();
    let expected_len = first.audio.len() + tiles as usize * (cfg.output_length - overlap);

    // From-scratch synthesis with the same signal-stage budget and no spectral stage.
    let mut scratch_cfg = cfg.clone();
    scratch_cfg.stage1_iterations = 0;
    let scratch = synthesize(&desk.target, &scratch_cfg).map_err(|e| e.to_string())?;
    let scratch_loss = scratch.manifest.final_loss().unwrap_or(f64::NAN);

    let first_tile = losses[0];
    let within_first = losses.iter().all(|l| *l <= 2.0 * first_tile && first_tile <= 2.0 * l);
    let within_scratch = losses.iter().all(|l| *l <= 2.0 * scratch_loss);
    let two_stage = first.manifest.final_loss().unwrap_or(f64::NAN);
    check(
        prefix_exact
            && whole.len() == expected_len
            && within_first
            && within_scratch
            && tile_secs < first_secs * tiles as f64,
        format!(
            "{tiles} tiles, overlap {overlap}: prefixes bit-exact {prefix_exact}, length {} (expected {expected_len}), tile losses {:?}, equal-budget from-scratch {scratch_loss:.5} (two-stage {two_stage:.5}), {tile_secs:.0}s vs {:.0}s budget",
            whole.len(),
            losses.iter().map(|l| format!("{l:.5}")).collect::<Vec<_>>(),
            first_secs * tiles as f64
        ),
    )
}

fn determinism(desk: &Option<DeskRuns>) -> Outcome {
    let desk = desk.as_ref().ok_or("desk-scale runs unavailable")?;
    let (_, first, _) = &desk.runs[0];
    let cfg = first.manifest.config.clone();
    let again = synthesize(&desk.target, &cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (tag, run) in [("a", first), ("b", &again)] {
        let wav = dir.path().join(format!("{tag}.wav"));
        let manifest = dir.path().join(format!("{tag}.json"));
        let params = dir.path().join(format!("{tag}.params"));
        write_wav(&run.audio, &wav, WavEncoding::Float32).map_err(|e| e.to_string())?;
        fs::write(&manifest, run.manifest.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        write_params(&extract_params(&desk.target, &cfg).map_err(|e| e.to_string())?, &params)
            .map_err(|e| e.to_string())?;
        files.push([wav, manifest, params].map(|p| fs::read(p).unwrap()));
    }
    let same = files[0] == files[1];
    check(
        same,
        format!(
            "WAV {} bytes, manifest {} bytes, parameters {} bytes identical: {same}",
            files[0][0].len(),
            files[0][1].len(),
            files[0][2].len()
        ),
    )
}

fn main() -> ExitCode {
    let mut desk = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {n:>2}. {name} [{secs:.1}s]: {detail}");
    };
    report(1, "shape reproduction", &mut shape_reproduction);
    report(2, "parameter counts", &mut parameter_counts);
    report(3, "compression fixed points", &mut compression_fixed_points);
    report(4, "gram marginalization", &mut gram_marginalization);
    report(5, "gradient suite", &mut gradient_suite);
    report(6, "brute-force oracles", &mut brute_force_oracles);
    report(7, "optimizer", &mut optimizer);
    report(8, "overlap-add reconstruction", &mut cola_reconstruction);
    report(9, "desk-scale synthesis", &mut || desk_synthesis(&mut desk));
    report(10, "extension contract", &mut || extension_contract(&desk));
    report(11, "determinism", &mut || determinism(&desk));
    if failures == 0 {
        println!("acceptance: all 11 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 11 criteria failed");
        ExitCode::FAILURE
    }
}
