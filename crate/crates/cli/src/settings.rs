//! Configuration layering: preset, then config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use texsynth::{Preset, StftConfig, SynthesisConfig};

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Named base configuration (`default` or `desk`).
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,

    /// `key = value` file applied on top of the preset.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, value_name = "HZ")]
    pub sample_rate: Option<u32>,

    /// STFT window length in samples.
    #[arg(long, value_name = "SAMPLES")]
    pub window: Option<usize>,

    /// STFT hop in samples.
    #[arg(long, value_name = "SAMPLES")]
    pub hop: Option<usize>,

    /// Log compression factor.
    #[arg(long)]
    pub compression: Option<f64>,

    /// Comma-separated odd filter sizes.
    #[arg(long, value_delimiter = ',', value_name = "SIZES")]
    pub filter_sizes: Option<Vec<usize>>,

    #[arg(long)]
    pub channels_per_size: Option<usize>,

    /// Iterations of the log-spectrogram stage (0 skips it).
    #[arg(long = "stage1-iters")]
    pub stage1_iterations: Option<usize>,

    /// Iterations of the time-signal stage.
    #[arg(long = "stage2-iters")]
    pub stage2_iterations: Option<usize>,

    /// Output (and tile) length in samples.
    #[arg(long, value_name = "SAMPLES")]
    pub output_length: Option<usize>,

    #[arg(long)]
    pub seed_noise: Option<u64>,

    #[arg(long)]
    pub seed_filters: Option<u64>,

    #[arg(long)]
    pub seed_phase: Option<u64>,

    /// Keep only correlations between filters of the same size.
    #[arg(long)]
    pub prune_cross_size: bool,

    /// Fraction of each tile copied into the next one.
    #[arg(long)]
    pub overlap_fraction: Option<f64>,

    /// Amplitude of the white-noise initialization.
    #[arg(long)]
    pub noise_amplitude: Option<f64>,

    /// Stored correction pairs of the optimizer.
    #[arg(long)]
    pub lbfgs_memory: Option<usize>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: texsynth::Error| e.to_string())
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<SynthesisConfig> {
        let file = match &self.config {
            Some(path) => read_config_file(path)?,
            None => Vec::new(),
        };
        let file_preset = file
            .iter()
            .find(|(k, _, _)| k == "preset")
            .map(|(_, v, line)| v.parse::<Preset>().with_context(|| format!("line {line}")))
            .transpose()?;
        let preset = self.preset.or(file_preset).unwrap_or(Preset::Default);
        let mut cfg = SynthesisConfig::preset(preset);
        for (key, value, line) in &file {
            if key != "preset" {
                apply(&mut cfg, key, value).with_context(|| {
                    format!("{}:{line}: bad setting '{key}'", self.config.as_ref().unwrap().display())
                })?;
            }
        }
        self.apply_flags(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_flags(&self, cfg: &mut SynthesisConfig) {
        if let Some(v) = self.sample_rate {
            cfg.sample_rate = v;
        }
        if let Some(v) = self.window {
            cfg.stft = StftConfig { window_length: v, ..cfg.stft };
        }
        if let Some(v) = self.hop {
            cfg.stft = StftConfig { hop: v, ..cfg.stft };
        }
        if let Some(v) = self.compression {
            cfg.compression = v;
        }
        if let Some(v) = &self.filter_sizes {
            cfg.filter_sizes = v.clone();
        }
        if let Some(v) = self.channels_per_size {
            cfg.channels_per_size = v;
        }
        if let Some(v) = self.stage1_iterations {
            cfg.stage1_iterations = v;
        }
        if let Some(v) = self.stage2_iterations {
            cfg.stage2_iterations = v;
        }
        if let Some(v) = self.output_length {
            cfg.output_length = v;
        }
        if let Some(v) = self.seed_noise {
            cfg.seeds.noise = v;
        }
        if let Some(v) = self.seed_filters {
            cfg.seeds.filters = v;
        }
        if let Some(v) = self.seed_phase {
            cfg.seeds.phase = v;
        }
        if self.prune_cross_size {
            cfg.cross_size_pruning = true;
        }
        if let Some(v) = self.overlap_fraction {
            cfg.overlap_fraction = v;
        }
        if let Some(v) = self.noise_amplitude {
            cfg.noise_amplitude = v;
        }
        if let Some(v) = self.lbfgs_memory {
            cfg.lbfgs_memory = v;
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment; keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected 'key = value', found '{raw}'", i + 1);
        };
        out.push((k.trim().replace('-', "_"), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

fn read_config_file(path: &Path) -> Result<Vec<(String, String, usize)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing {}", path.display()))
}

fn apply(cfg: &mut SynthesisConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "sample_rate" => cfg.sample_rate = value.parse()?,
        "window" | "window_length" => cfg.stft.window_length = value.parse()?,
        "hop" => cfg.stft.hop = value.parse()?,
        "compression" => cfg.compression = value.parse()?,
        "filter_sizes" => {
            cfg.filter_sizes = value
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()?
        }
        "channels_per_size" => cfg.channels_per_size = value.parse()?,
        "stage1_iterations" | "stage1_iters" => cfg.stage1_iterations = value.parse()?,
        "stage2_iterations" | "stage2_iters" => cfg.stage2_iterations = value.parse()?,
        "output_length" => cfg.output_length = value.parse()?,
        "seed_noise" => cfg.seeds.noise = value.parse()?,
        "seed_filters" => cfg.seeds.filters = value.parse()?,
        "seed_phase" => cfg.seeds.phase = value.parse()?,
        "prune_cross_size" | "cross_size_pruning" => cfg.cross_size_pruning = value.parse()?,
        "overlap_fraction" => cfg.overlap_fraction = value.parse()?,
        "noise_amplitude" => cfg.noise_amplitude = value.parse()?,
        "lbfgs_memory" => cfg.lbfgs_memory = value.parse()?,
        _ => bail!("unknown key"),
    }
    Ok(())
}
