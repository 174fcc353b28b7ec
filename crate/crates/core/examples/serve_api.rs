//! Starts the HTTP API on a checkpoint and the default world.
//!
//! cargo run --release --example serve_api -- <model.ckpt> [port]
//!
//! curl localhost:8787/health
//! curl -X POST localhost:8787/sample -d '{"query_id": "q-00000-0", "omega": 2, "seed": 1}'

use std::net::SocketAddr;
use std::sync::Arc;

use seedprior::config::RunConfig;
use seedprior::model::TrainedModel;
use seedprior::service::{serve, ServiceState, DEFAULT_PORT};
use seedprior::world::{generate_world, WorldData};

#[tokio::main]
async fn main() -> seedprior::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().expect("usage: serve_api <model.ckpt> [port]");
    let port = args.next().map_or(DEFAULT_PORT, |p| p.parse().expect("port"));
    let cfg = RunConfig::default();
    let data = WorldData::from_world(&generate_world(&cfg.world)?, cfg.eval_fraction, cfg.split_seed)?;
    let state = ServiceState::new(TrainedModel::load(ckpt.as_ref())?, data, cfg.sampler)?;
    let first = &state.data.eval.pairs[0].id;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    println!("listening on http://{addr}, try query_id {first}");
    serve(Arc::new(state), addr).await
}
