//! Runs one desk-scale synthesis on the bundled synthetic rain texture,
//! optionally followed by extension tiles, and prints the loss trajectory.
//!
//!     cargo run --release -p texsynth --example desk_run -- [seed] [tiles]

use texsynth::fixture::rain_texture;
use texsynth::{extend, extract_params, synthesize, SynthesisConfig};

fn main() -> texsynth::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let tiles: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = SynthesisConfig::desk();
    cfg.seeds.noise = seed;
    let target = rain_texture(cfg.output_length, cfg.sample_rate, 7)?;
    let out = synthesize(&target, &cfg)?;
    let m = &out.manifest;
    println!("noise reference loss {:.5}", m.noise_reference_loss);
    for s in &m.stages {
        println!(
            "{:>9}: {} iterations, {} evaluations, {:?}, loss {:?} -> {:?}",
            s.name,
            s.iterations,
            s.evaluations,
            s.termination,
            s.initial_loss(),
            s.final_loss()
        );
    }
    println!("timings {:?}", out.timings);
    let params = extract_params(&target, &cfg)?;
    let mut previous = out.audio;
    for k in 1..=tiles {
        cfg.seeds.noise = seed + k;
        let start = std::time::Instant::now();
        let tile = extend(&previous, &params, &cfg)?;
        println!(
            "tile {k}: {} iterations, {:?}, loss {:?} -> {:?}, {:.1}s",
            tile.stage.iterations,
            tile.stage.termination,
            tile.stage.initial_loss(),
            tile.stage.final_loss(),
            start.elapsed().as_secs_f64()
        );
        previous = tile.audio;
    }
    Ok(())
}
