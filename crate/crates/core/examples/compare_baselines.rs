//! Trains the diffusion prior and the regression baseline on the default
//! synthetic world and prints their metrics side by side.
//!
//! cargo run --release --example compare_baselines -- [steps]

use std::time::Instant;

use seedprior::diffusion::{train_diffusion, DiffusionModel, SamplerConfig, ScheduleConfig, SteerSignal, TrainConfig};
use seedprior::eval::{evaluate, EvalConfig, EvalContext, Predictor};
use seedprior::nn::NetworkSpec;
use seedprior::regression::{train_regression, RegressionModel};
use seedprior::retrieval::Index;
use seedprior::world::{generate_world, WorldConfig, WorldData};

fn main() -> seedprior::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(20_000, |s| s.parse().expect("steps"));
    let world = generate_world(&WorldConfig::default())?;
    let data = WorldData::from_world(&world, 0.2, 0)?;
    let (q, z) = data.train.matrices(&data.catalog)?;
    let sigma_data = data.catalog.sigma_data();
    let spec = NetworkSpec::new(data.catalog.dim(), data.query_dim(), 64, 6);
    let cfg = TrainConfig {
        total_steps: steps,
        warmup: steps / 20,
        ..TrainConfig::default()
    };

    let t = Instant::now();
    let model = DiffusionModel::init(spec.clone(), ScheduleConfig::with_sigma_data(sigma_data), 0)?;
    let model = train_diffusion(model, &q, &z, cfg.clone(), |s, l| {
        if s % 2000 == 0 {
            println!("diffusion step {s} loss {l:.4}");
        }
    })?;
    println!("diffusion trained in {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let reg = RegressionModel::init(spec, sigma_data, 0)?;
    let reg = train_regression(reg, &q, &z, &cfg, |s, l| {
        if s % 2000 == 0 {
            println!("regression step {s} loss {l:.4}");
        }
    })?;
    println!("regression trained in {:.1}s", t.elapsed().as_secs_f64());

    let index = Index::build(&data.catalog)?;
    let reference = EvalContext::reference_moments(&data.catalog)?;
    let ctx = EvalContext {
        catalog: &data.catalog,
        index: &index,
        concepts: &data.concepts,
        reference: &reference,
        num_genres: data.num_genres(),
    };
    let ecfg = EvalConfig {
        k_list: vec![10, 20, 50],
        max_queries: Some(100),
        ..EvalConfig::default()
    };

    let r = evaluate(Predictor::Regression(&reg), &data.eval.pairs, &ctx, &ecfg)?;
    println!("regression {}", r.to_flat_json());
    for omega in [-1.0, 0.0, 2.0, 5.0, 9.0, 15.0] {
        let t = Instant::now();
        let sampler = SamplerConfig { omega, ..SamplerConfig::default() };
        let r = evaluate(Predictor::Diffusion { model: &model, sampler: &sampler }, &data.eval.pairs, &ctx, &ecfg)?;
        println!("diffusion ω={omega} ({:.1}s) {}", t.elapsed().as_secs_f64(), r.to_flat_json());
    }
    // steering toward each query's true genre needs per-query configs
    let pairs = &data.eval.pairs[..100];
    let mut hits = 0.0;
    for p in pairs {
        let sampler = SamplerConfig {
            steers: vec![SteerSignal {
                vector: data.concepts[p.genre].text_vector_target.clone(),
                strength: 0.02,
            }],
            ..SamplerConfig::default()
        };
        let r = evaluate(Predictor::Diffusion { model: &model, sampler: &sampler }, std::slice::from_ref(p), &ctx, &ecfg)?;
        hits += r.recall_at[&10];
    }
    println!("steered R@10 {}", hits / pairs.len() as f64);
    Ok(())
}
