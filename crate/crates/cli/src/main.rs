//! `texsynth`: analyze, synthesize and extend sound textures.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use texsynth::container::{decode, encode, is_param_file};
use texsynth::pipeline::{hash_bytes, hash_samples, StageSummary};
use texsynth::render::write_spectrogram_png;
use texsynth::tf::Analyzer;
use texsynth::{
    border_diagnostic, extend, extract_params, read_wav, synthesize, synthesize_from_params,
    write_wav, AudioBuffer, ParamCounts, ParamSet, SynthesisConfig, WavEncoding,
};

use settings::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "texsynth", version, about = "Sound texture analysis and synthesis")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Encoding {
    Float32,
    Pcm16,
}

impl From<Encoding> for WavEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Float32 => WavEncoding::Float32,
            Encoding::Pcm16 => WavEncoding::Pcm16,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract texture parameters from a target recording.
    Analyze {
        target: PathBuf,
        out: PathBuf,
        /// Summary of shapes and counts (defaults to `<out>.txt`).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Synthesize a new texture from a recording or a parameter file.
    Synthesize {
        /// Target WAV file or parameter file written by `analyze`.
        input: PathBuf,
        out: PathBuf,
        /// Write the run manifest (JSON) here.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write per-frame border correlations against the target (WAV targets only).
        #[arg(long)]
        border_report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "float32")]
        encoding: Encoding,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Append tiles to an existing texture.
    Extend {
        previous: PathBuf,
        /// Target WAV file or parameter file.
        target: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        tiles: u64,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "float32")]
        encoding: Encoding,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render the compressed log-spectrogram as a grayscale PNG.
    Spectrogram {
        input: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Analyze {
            target,
            out,
            sidecar,
            config,
        } => analyze(&target, &out, sidecar, &config.resolve()?),
        Command::Synthesize {
            input,
            out,
            manifest,
            border_report,
            encoding,
            config,
        } => cmd_synthesize(&input, &out, manifest, border_report, encoding.into(), &config.resolve()?),
        Command::Extend {
            previous,
            target,
            out,
            tiles,
            manifest,
            encoding,
            config,
        } => cmd_extend(&previous, &target, &out, tiles, manifest, encoding.into(), &config.resolve()?),
        Command::Spectrogram { input, out, config } => spectrogram(&input, &out, &config.resolve()?),
    }
}

fn analyze(target: &Path, out: &Path, sidecar: Option<PathBuf>, cfg: &SynthesisConfig) -> Result<()> {
    let audio = read_wav(target)?;
    let params = extract_params(&audio, cfg)?;
    fs::write(out, encode(&params)).with_context(|| format!("writing {}", out.display()))?;
    let sidecar = sidecar.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".txt");
        p.into()
    });
    let summary = sidecar_text(cfg, &audio, &params);
    fs::write(&sidecar, &summary).with_context(|| format!("writing {}", sidecar.display()))?;
    info!("{}", summary.lines().collect::<Vec<_>>().join(", "));
    Ok(())
}

fn sidecar_text(cfg: &SynthesisConfig, audio: &AudioBuffer, params: &ParamSet) -> String {
    let counts = ParamCounts::new(&cfg.filter_spec(), cfg.stft.bins());
    let sizes: Vec<String> = cfg.filter_sizes.iter().map(|s| s.to_string()).collect();
    format!(
        "fingerprint = {}\n\
         target_samples = {}\n\
         sample_rate = {}\n\
         frames = {}\n\
         bins = {}\n\
         layers = {}\n\
         channels = {}\n\
         filter_sizes = {}\n\
         cross_size_pruning = {}\n\
         stored_entries = {}\n\
         unordered_pairs = {}\n\
         unordered_pair_entries = {}\n\
         pruned_pairs = {}\n\
         pruned_entries = {}\n\
         active_entries = {}\n",
        params.fingerprint,
        audio.len(),
        audio.sample_rate(),
        cfg.stft.frames(audio.len()).unwrap_or(0),
        cfg.stft.bins(),
        params.tensors.len(),
        counts.channels,
        sizes.join(","),
        cfg.cross_size_pruning,
        counts.dense_entries,
        counts.unordered_pairs,
        counts.unordered_entries,
        counts.pruned_pairs,
        counts.pruned_entries,
        counts.active_entries(cfg.cross_size_pruning),
    )
}

enum Target {
    Audio(AudioBuffer),
    Params { params: ParamSet, hash: String },
}

fn load_target(path: &Path, cfg: &SynthesisConfig) -> Result<Target> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if is_param_file(&bytes) {
        let params = decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        let expected = cfg.fingerprint();
        if params.fingerprint != expected {
            bail!(texsynth::Error::Fingerprint {
                expected: expected.to_string(),
                found: params.fingerprint.to_string(),
            });
        }
        Ok(Target::Params {
            params,
            hash: hash_bytes(&bytes),
        })
    } else {
        Ok(Target::Audio(read_wav(path)?))
    }
}

fn write_json(path: &Path, json: &str) -> Result<()> {
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synthesize(
    input: &Path,
    out: &Path,
    manifest: Option<PathBuf>,
    border_report: Option<PathBuf>,
    encoding: WavEncoding,
    cfg: &SynthesisConfig,
) -> Result<()> {
    let (result, target_audio) = match load_target(input, cfg)? {
        Target::Audio(audio) => (synthesize(&audio, cfg)?, Some(audio)),
        Target::Params { params, hash } => (synthesize_from_params(&params, cfg, hash)?, None),
    };
    write_wav(&result.audio, out, encoding)?;
    if let Some(path) = manifest {
        write_json(&path, &result.manifest.to_json()?)?;
    }
    if let Some(path) = border_report {
        let Some(target) = target_audio else {
            bail!("a border report needs a WAV target");
        };
        let report = border_diagnostic(&target, &result.audio, cfg)?;
        let json = serde_json::to_string_pretty(&report)?;
        write_json(&path, &json)?;
    }
    info!(
        "final loss {:.6} (white noise {:.6}); {:?}",
        result.manifest.final_loss().unwrap_or(f64::NAN),
        result.manifest.noise_reference_loss,
        result.timings
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ExtendManifest {
    tool_version: &'static str,
    config: SynthesisConfig,
    fingerprint: String,
    previous_hash: String,
    overlap: usize,
    tiles: Vec<StageSummary>,
    output_length: usize,
}

#[allow(clippy::too_many_arguments)]
fn cmd_extend(
    previous: &Path,
    target: &Path,
    out: &Path,
    tiles: u64,
    manifest: Option<PathBuf>,
    encoding: WavEncoding,
    cfg: &SynthesisConfig,
) -> Result<()> {
    if tiles == 0 {
        bail!("--tiles must be at least 1");
    }
    let prev = read_wav(previous)?;
    let params = match load_target(target, cfg)? {
        Target::Audio(audio) => extract_params(&audio, cfg)?,
        Target::Params { params, .. } => params,
    };
    let mut whole = prev.clone();
    let mut last = prev.clone();
    let mut summaries = Vec::new();
    for k in 0..tiles {
        let mut c = cfg.clone();
        c.seeds.noise = cfg.seeds.noise.wrapping_add(k);
        let tile = extend(&last, &params, &c)?;
        info!(
            "tile {}: loss {:.6}",
            k + 1,
            tile.stage.final_loss().unwrap_or(f64::NAN)
        );
        whole = tile.append_to(&whole)?;
        summaries.push(tile.stage);
        last = tile.audio;
    }
    write_wav(&whole, out, encoding)?;
    if let Some(path) = manifest {
        let m = ExtendManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            config: cfg.clone(),
            fingerprint: cfg.fingerprint().to_string(),
            previous_hash: hash_samples(prev.samples()),
            overlap: cfg.overlap_len(),
            tiles: summaries,
            output_length: whole.len(),
        };
        write_json(&path, &serde_json::to_string_pretty(&m)?)?;
    }
    Ok(())
}

fn spectrogram(input: &Path, out: &Path, cfg: &SynthesisConfig) -> Result<()> {
    let audio = read_wav(input)?;
    let s = Analyzer::new(cfg.stft)?.log_spectrogram(audio.samples(), cfg.compression)?;
    write_spectrogram_png(&s, out)?;
    info!("{} x {} image", s.bins, s.frames);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use texsynth::Fingerprint;

    #[test]
    fn sidecar_reports_default_counts() {
        let mut cfg = SynthesisConfig::default();
        let audio = AudioBuffer::new(vec![0.0; 44_100], 22_050).unwrap();
        let params = ParamSet {
            tensors: Vec::new(),
            fingerprint: Fingerprint([0; 32]),
        };
        let text = sidecar_text(&cfg, &audio, &params);
        assert!(text.contains("frames = 171\n"));
        assert!(text.contains("unordered_pair_entries = 134873600\n"));
        assert!(text.contains("active_entries = 134873600\n"));
        cfg.cross_size_pruning = true;
        let text = sidecar_text(&cfg, &audio, &params);
        assert!(text.contains("active_entries = 16974336\n"));
    }
}
