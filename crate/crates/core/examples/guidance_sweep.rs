//! Evaluates a diffusion checkpoint across guidance strengths and prints the
//! recall / triplet accuracy / diversity table.
//!
//! cargo run --release --example guidance_sweep -- <model.ckpt> [queries]

use seedprior::commands::{sweep, sweep_table, SweepRow};
use seedprior::config::RunConfig;
use seedprior::model::TrainedModel;
use seedprior::world::{generate_world, WorldData};

fn main() -> seedprior::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("usage: guidance_sweep <model.ckpt> [queries]");
    let queries: usize = args.next().map_or(100, |s| s.parse().expect("queries"));
    let cfg = RunConfig::default();
    let data = WorldData::from_world(&generate_world(&cfg.world)?, cfg.eval_fraction, cfg.split_seed)?;
    let model = TrainedModel::load(ckpt.as_ref())?;
    let eval = seedprior::eval::EvalConfig {
        max_queries: Some(queries),
        ..cfg.eval.clone()
    };
    let results = sweep(&model, &data, &cfg.sampler, &eval, &[-1.0, 0.0, 2.0, 5.0, 9.0, 11.0, 15.0])?;
    let rows: Vec<SweepRow> = results.iter().map(|(w, r)| SweepRow::from_report(*w, r)).collect();
    print!("{}", sweep_table(&rows));
    Ok(())
}
