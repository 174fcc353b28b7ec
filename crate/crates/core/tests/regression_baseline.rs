use seedprior::diffusion::TrainConfig;
use seedprior::nn::NetworkSpec;
use seedprior::regression::{train_regression, RegressionModel};
use seedprior::world::{generate_world, WorldConfig, WorldData};

fn fit(world_cfg: WorldConfig, steps: u64) -> (seedprior::world::World, WorldData, RegressionModel) {
    let world = generate_world(&world_cfg).unwrap();
    let data = WorldData::from_world(&world, 0.2, 0).unwrap();
    let (q, z) = data.train.matrices(&data.catalog).unwrap();
    let spec = NetworkSpec::new(data.catalog.dim(), data.query_dim(), 64, 3);
    let cfg = TrainConfig {
        total_steps: steps,
        warmup: steps / 20,
        ..TrainConfig::default()
    };
    let model = RegressionModel::init(spec, data.catalog.sigma_data(), 0).unwrap();
    let model = train_regression(model, &q, &z, &cfg, |_, _| {}).unwrap();
    (world, data, model)
}

#[test]
fn separable_world_is_learned() {
    let (_, data, model) = fit(
        WorldConfig {
            ambiguity: 1,
            query_noise: 0.0,
            ..WorldConfig::default()
        },
        5000,
    );
    let (q, z) = data.eval.matrices(&data.catalog).unwrap();
    let (mse, _) = model.loss_and_grad(&q, &z).unwrap();
    assert!(mse < 0.01, "held-out squared error {mse}");
}

#[test]
fn ambiguous_world_predictions_shrink_toward_the_conditional_mean() {
    let (world, data, model) = fit(WorldConfig::default(), 3000);
    let pairs = &data.eval.pairs[..300];
    let (q, _) = seedprior::world::PairedDataset { pairs: pairs.to_vec() }
        .matrices(&data.catalog)
        .unwrap();
    let preds = model.predict_batch(&q).unwrap();
    let idx = data.catalog.index_of();
    let (mut to_mean, mut to_target, mut norm) = (0.0, 0.0, 0.0);
    for (i, p) in pairs.iter().enumerate() {
        let pred = preds.row(i);
        let mean = world.conditional_mean(p).unwrap();
        let target = &data.catalog.items[idx[p.target_id.as_str()]].embedding;
        let d2 = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
        to_mean += d2(pred, &mean);
        to_target += d2(pred, target);
        norm += pred.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    }
    let n = pairs.len() as f64;
    assert!(norm / n < 1.0, "mean norm {}", norm / n);
    assert!(to_mean < to_target, "{} vs {}", to_mean / n, to_target / n);
}

#[test]
fn predictions_depend_on_the_query() {
    let (_, data, model) = fit(
        WorldConfig {
            items_per_genre: 64,
            ..WorldConfig::default()
        },
        300,
    );
    let a = model.predict(&data.eval.pairs[0].query).unwrap();
    let b = model.predict(&data.eval.pairs[1].query).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, model.predict(&data.eval.pairs[0].query).unwrap());
}
