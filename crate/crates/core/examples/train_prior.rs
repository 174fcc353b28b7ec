//! Trains the diffusion prior on the default world and saves a checkpoint.
//!
//! cargo run --release --example train_prior -- [steps] [out.ckpt]

use std::path::PathBuf;
use std::time::Instant;

use seedprior::commands::train_model;
use seedprior::config::RunConfig;
use seedprior::world::{generate_world, WorldData};

fn main() -> seedprior::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().unwrap_or_else(|| "20000".into());
    let out: PathBuf = args.next().map_or("target/example-model.ckpt".into(), PathBuf::from);
    let warmup = format!("train.warmup={}", steps.parse::<u64>().unwrap_or(20_000) / 20);
    let cfg = RunConfig::from_json_with_overrides(None, &[format!("train.total_steps={steps}"), warmup])?;

    let world = generate_world(&cfg.world)?;
    let data = WorldData::from_world(&world, cfg.eval_fraction, cfg.split_seed)?;
    let every = (cfg.train.total_steps / 10).max(1);
    let started = Instant::now();
    let mut ema = None;
    let model = train_model(&cfg, &data, |step, loss| {
        let e = ema.map_or(loss, |e: f64| 0.98 * e + 0.02 * loss);
        ema = Some(e);
        if step % every == 0 {
            println!("step {step:>6}  loss {e:.4}  ({:.0}s)", started.elapsed().as_secs_f64());
        }
    })?;
    model.save(&out)?;
    println!("saved {} parameters to {}", model.params().as_slice().len(), out.display());
    Ok(())
}
