//! Generates the default synthetic world, prints what it contains and
//! writes it to disk in the same layout `seedprior synth` produces.
//!
//! cargo run --release --example synth_world -- [out_dir]

use std::path::PathBuf;

use seedprior::world::{generate_world, WorldConfig, WorldData};

fn main() -> seedprior::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or("target/example-world".into(), PathBuf::from);
    let cfg = WorldConfig::default();
    let world = generate_world(&cfg)?;
    let data = WorldData::from_world(&world, 0.2, 0)?;

    println!(
        "catalog: {} items in {} genres, target dim {}, sigma_data {:.4}",
        data.catalog.len(),
        data.num_genres(),
        data.catalog.dim(),
        data.catalog.sigma_data()
    );
    println!("pairs: {} train, {} eval, query dim {}", data.train.len(), data.eval.len(), data.query_dim());

    let p = &data.eval.pairs[0];
    let posterior = world.genre_posterior(p);
    let entropy: f64 = posterior.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
    let mean = world.conditional_mean(p)?;
    let norm = mean.iter().map(|x| x * x).sum::<f32>().sqrt();
    println!(
        "query {}: true genre {}, support {:?}, genre entropy {entropy:.3}, |E[z|q]| = {norm:.3}",
        p.id, p.genre, p.support
    );

    data.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
