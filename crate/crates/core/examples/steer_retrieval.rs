//! Draws seeds for one query under different guidance and steering
//! settings and shows how the genre mix of the fused top-20 changes.
//!
//! cargo run --release --example steer_retrieval -- [model.ckpt]
//!
//! Without a checkpoint a short 3000-step model is trained first.

use seedprior::commands::train_model;
use seedprior::config::RunConfig;
use seedprior::diffusion::{SamplerConfig, SlerpSteer, SteerSignal};
use seedprior::model::TrainedModel;
use seedprior::retrieval::{retrieve_fused, Index};
use seedprior::tensor::{normalized, Matrix};
use seedprior::world::{generate_world, WorldData};

fn genre_mix(model: &TrainedModel, sampler: &SamplerConfig, query: &[f32], index: &Index, genres: usize) -> String {
    let q = Matrix::from_vec(1, query.len(), query.to_vec());
    let seeds = model.predictor(sampler).seeds(&q, 50).unwrap().remove(0);
    let units: Vec<Vec<f32>> = seeds.iter().filter_map(|s| normalized(s)).collect();
    let hits = retrieve_fused(index, &units, 20).unwrap().hits;
    let mut counts = vec![0; genres];
    for h in &hits {
        counts[h.genre] += 1;
    }
    counts.iter().map(|c| format!("{c:>3}")).collect()
}

fn main() -> seedprior::Result<()> {
    let cfg = RunConfig::default();
    let world = generate_world(&cfg.world)?;
    let data = WorldData::from_world(&world, cfg.eval_fraction, cfg.split_seed)?;
    let model = match std::env::args().nth(1) {
        Some(p) => TrainedModel::load(p.as_ref())?,
        None => {
            let quick = RunConfig::from_json_with_overrides(None, &["train.total_steps=3000".into(), "train.warmup=150".into()])?;
            train_model(&quick, &data, |_, _| {})?
        }
    };
    let index = Index::build(&data.catalog)?;
    let pair = &data.eval.pairs[0];
    let other = pair.support.iter().copied().find(|&g| g != pair.genre).unwrap();
    let concept = |g: usize| data.concepts[g].text_vector_target.clone();
    let genres = data.num_genres();

    println!("query {} (true genre {}, support {:?})", pair.id, pair.genre, pair.support);
    println!("{:<34}{}", "top-20 genre counts", (0..genres).map(|g| format!("{g:>3}")).collect::<String>());
    let base = SamplerConfig::default();
    let settings = vec![
        ("unconditional (ω = −1)", SamplerConfig { omega: -1.0, ..base.clone() }),
        ("conditional (ω = 0)", base.clone()),
        ("guided (ω = 5)", SamplerConfig { omega: 5.0, ..base.clone() }),
        (
            "steer toward true genre +0.02",
            SamplerConfig { steers: vec![SteerSignal { vector: concept(pair.genre), strength: 0.02 }], ..base.clone() },
        ),
        (
            "steer toward other support +0.05",
            SamplerConfig { steers: vec![SteerSignal { vector: concept(other), strength: 0.05 }], ..base.clone() },
        ),
        (
            "steer away from true genre −0.08",
            SamplerConfig { steers: vec![SteerSignal { vector: concept(pair.genre), strength: -0.08 }], ..base.clone() },
        ),
        (
            "slerp toward other support 0.55",
            SamplerConfig { slerp: Some(SlerpSteer { vector: concept(other), ratio: 0.55 }), ..base.clone() },
        ),
    ];
    for (name, s) in settings {
        println!("{name:<34}{}", genre_mix(&model, &s, &pair.query, &index, genres));
    }
    Ok(())
}
