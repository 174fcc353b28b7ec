use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use seedprior::commands::{
    cmd_eval, cmd_sample, cmd_sweep, cmd_synth, cmd_train, parse_genre_value, sweep_table, EvalSource, SampleArgs,
};
use seedprior::config::RunConfig;
use seedprior::model::{ModelKind, TrainedModel};
use seedprior::service::{serve, ServiceState, DEFAULT_PORT};
use seedprior::world::WorldData;
use seedprior::{Error, Result};

/// Diffusion-prior seed generation for cross-modal retrieval on a synthetic
/// joint-embedding world.
///
/// Any `--section.field=value` argument overrides the JSON config, e.g.
/// `--train.total_steps=5000`.
#[derive(Debug, Parser)]
#[command(name = "seedprior", version)]
struct Cli {
    /// Run configuration (JSON). Defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a world: catalog, train/eval pairs, concept proxies.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model named by `kind` (or --kind).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
    },
    /// Draw seed embeddings for a query file (default: the eval pairs).
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        omega: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// GENRE:STRENGTH, repeatable, e.g. `3:+0.08`.
        #[arg(long, allow_hyphen_values = true)]
        steer: Vec<String>,
        /// GENRE:RATIO, e.g. `3:0.55`.
        #[arg(long)]
        slerp: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_query: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint or a sample dump on the eval pairs.
    Eval {
        #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint across guidance strengths.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "-1,0,2,5,9,11,15", allow_hyphen_values = true)]
        omegas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    match s {
        "diffusion" => Ok(ModelKind::Diffusion),
        "regression" => Ok(ModelKind::Regression),
        _ => Err(format!("unknown model kind {s:?}")),
    }
}

/// Splits `--a.b=value` overrides from the arguments clap should see.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, _)) if key.contains('.') => overrides.push(a[2..].to_string()),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn run(cli: Cli, overrides: &[String]) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    match cli.command {
        Command::Synth { out } => {
            let data = cmd_synth(&cfg, &out)?;
            println!(
                "wrote {} catalog items, {} train / {} eval pairs to {}",
                data.catalog.len(),
                data.train.len(),
                data.eval.len(),
                out.display()
            );
        }
        Command::Train { data, out, kind } => {
            if let Some(k) = kind {
                cfg.kind = k;
            }
            cmd_train(&cfg, &data, &out)?;
            println!("wrote {} checkpoint to {}", cfg.kind.as_str(), out.display());
        }
        Command::Sample {
            ckpt,
            data,
            queries,
            omega,
            steps,
            steer,
            slerp,
            seed,
            n_per_query,
            out,
        } => {
            let args = SampleArgs {
                omega,
                steps,
                steer: steer.iter().map(|s| parse_genre_value(s)).collect::<Result<_>>()?,
                slerp: slerp.as_deref().map(parse_genre_value).transpose()?,
                seed,
                n_per_query,
            };
            let path = cmd_sample(&cfg, &ckpt, &data, queries.as_deref(), &args, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Eval {
            ckpt,
            samples,
            data,
            k_list,
            out,
        } => {
            if let Some(k) = k_list {
                cfg.eval.k_list = k;
                cfg.validate()?;
            }
            let source = match (ckpt, samples) {
                (Some(c), None) => EvalSource::Checkpoint(c),
                (None, Some(s)) => EvalSource::Samples(s),
                _ => return Err(Error::Config("give exactly one of --ckpt or --samples".into())),
            };
            let report = cmd_eval(&cfg, &source, &data, &out)?;
            println!("{}", report.to_flat_json());
        }
        Command::Sweep {
            ckpt,
            data,
            omegas,
            out,
        } => {
            let rows = cmd_sweep(&cfg, &ckpt, &data, &omegas, &out)?;
            print!("{}", sweep_table(&rows));
        }
        Command::Serve { ckpt, data, port, host } => {
            let state = ServiceState::new(TrainedModel::load(&ckpt)?, WorldData::load(&data)?, cfg.sampler.clone())?;
            let addr = SocketAddr::new(host, port);
            eprintln!("listening on http://{addr}");
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(serve(Arc::new(state), addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
