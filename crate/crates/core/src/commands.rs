//! Command implementations behind the `seedprior` binary.
//!
//! Every command writes its artifacts under an output directory together
//! with a `manifest.json` listing inputs, the config hash and content
//! hashes. Only the manifest's `log` field carries wall-clock data.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::diffusion::{train_diffusion, DiffusionModel, SamplerConfig, ScheduleConfig, SlerpSteer, SteerSignal};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_seeds, EvalConfig, EvalContext};
use crate::metrics::MetricsReport;
use crate::model::{ModelKind, TrainedModel};
use crate::regression::{train_regression, RegressionModel};
use crate::retrieval::Index;
use crate::tensor::Matrix;
use crate::world::{generate_world, load_pairs, save_embeddings, EmbeddingRecord, Pair, WorldData, EVAL_PAIRS_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SAMPLES_FILE: &str = "samples.emb1";
pub const METRICS_FILE: &str = "metrics.json";

/// `sha256:` over git's blob framing `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub log: serde_json::Value,
}

fn hash_files(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let shown = base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
            Ok(FileHash {
                path: shown.display().to_string(),
                hash: content_hash(&std::fs::read(p)?),
            })
        })
        .collect()
}

/// Every regular file directly inside `dir`, sorted.
fn dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    v.sort();
    Ok(v)
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let m = Manifest {
        command: command.to_string(),
        config_hash: content_hash(cfg.canonical_json()?.as_bytes()),
        inputs: hash_files(inputs, None)?,
        outputs: hash_files(outputs, Some(out))?,
        log: json!({ "finished_unix": unix, "elapsed_s": started.elapsed().as_secs_f64() }),
    };
    std::fs::write(out.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<PathBuf> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(path.to_path_buf())
}

fn world_inputs(data_dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(dir_files(data_dir)?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect())
}

/// Writes the world, its split and the resolved config to `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<WorldData> {
    let started = Instant::now();
    let world = generate_world(&cfg.world)?;
    let data = WorldData::from_world(&world, cfg.eval_fraction, cfg.split_seed)?;
    data.save(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let outputs = world_inputs(out)?;
    write_manifest(out, "synth", cfg, &[], &outputs, started)?;
    Ok(data)
}

/// Schedule with `sigma_data` estimated from the catalog when requested.
pub fn resolve_schedule(cfg: &RunConfig, data: &WorldData) -> ScheduleConfig {
    let mut s = cfg.schedule.clone();
    if cfg.estimate_sigma_data {
        s.sigma_data = data.catalog.sigma_data();
    }
    s
}

/// Trains the model kind named by the config on the world's training pairs.
pub fn train_model(cfg: &RunConfig, data: &WorldData, mut on_step: impl FnMut(u64, f64)) -> Result<TrainedModel> {
    let (q, z) = data.train.matrices(&data.catalog)?;
    let spec = cfg.network.spec(data.catalog.dim(), data.query_dim());
    let schedule = resolve_schedule(cfg, data);
    Ok(match cfg.kind {
        ModelKind::Diffusion => {
            let m = DiffusionModel::init(spec, schedule, cfg.network.init_seed)?;
            TrainedModel::Diffusion(train_diffusion(m, &q, &z, cfg.train.clone(), &mut on_step)?)
        }
        ModelKind::Regression => {
            let m = RegressionModel::init(spec, schedule.sigma_data, cfg.network.init_seed)?;
            TrainedModel::Regression(train_regression(m, &q, &z, &cfg.train, &mut on_step)?)
        }
    })
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<TrainedModel> {
    let started = Instant::now();
    let data = WorldData::load(data_dir)?;
    std::fs::create_dir_all(out)?;
    let mut log = String::new();
    let every = (cfg.train.total_steps / 100).max(1);
    let model = train_model(cfg, &data, |step, loss| {
        if step % every == 0 {
            log.push_str(&format!("{{\"step\":{step},\"loss\":{loss}}}\n"));
        }
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    model.save(&ckpt)?;
    let log_path = out.join("train_log.jsonl");
    std::fs::write(&log_path, log)?;
    write_manifest(out, "train", cfg, &world_inputs(data_dir)?, &[ckpt, log_path], started)?;
    Ok(model)
}

/// Concept reference used by `--steer` and `--slerp`: `"3"` or `"genre-3"`.
pub fn parse_genre(s: &str) -> Result<usize> {
    s.strip_prefix("genre-")
        .unwrap_or(s)
        .parse()
        .map_err(|_| Error::Config(format!("bad genre reference {s:?}")))
}

/// `GENRE:VALUE`, e.g. `2:+0.08` or `genre-5:0.55`.
pub fn parse_genre_value(s: &str) -> Result<(usize, f64)> {
    let (g, v) = s
        .rsplit_once(':')
        .ok_or_else(|| Error::Config(format!("expected GENRE:VALUE, got {s:?}")))?;
    let v: f64 = v
        .trim_start_matches('+')
        .parse()
        .map_err(|_| Error::Config(format!("bad value in {s:?}")))?;
    Ok((parse_genre(g)?, v))
}

/// Sampling flags layered over the config's sampler section.
#[derive(Debug, Clone, Default)]
pub struct SampleArgs {
    pub omega: Option<f64>,
    pub steps: Option<usize>,
    pub steer: Vec<(usize, f64)>,
    pub slerp: Option<(usize, f64)>,
    pub seed: Option<u64>,
    pub n_per_query: Option<usize>,
}

/// Resolves genre references against the world's concept proxies.
pub fn sampler_with_args(base: &SamplerConfig, args: &SampleArgs, data: &WorldData) -> Result<SamplerConfig> {
    let concept = |g: usize| {
        data.concepts
            .iter()
            .find(|c| c.genre == g)
            .map(|c| c.text_vector_target.clone())
            .ok_or_else(|| Error::UnknownId(format!("genre-{g}")))
    };
    let mut s = base.clone();
    if let Some(o) = args.omega {
        s.omega = o;
    }
    if let Some(n) = args.steps {
        s.steps = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    for &(g, k) in &args.steer {
        s.steers.push(SteerSignal {
            vector: concept(g)?,
            strength: k,
        });
    }
    if let Some((g, ratio)) = args.slerp {
        s.slerp = Some(SlerpSteer {
            vector: concept(g)?,
            ratio,
        });
    }
    s.validate()?;
    Ok(s)
}

/// Writes `samples.emb1`: `n` rows per query, ids `<query id>#<j>`.
pub fn cmd_sample(
    cfg: &RunConfig,
    ckpt: &Path,
    data_dir: &Path,
    queries: Option<&Path>,
    args: &SampleArgs,
    out: &Path,
) -> Result<PathBuf> {
    let started = Instant::now();
    let model = TrainedModel::load(ckpt)?;
    let data = WorldData::load(data_dir)?;
    let qpath = queries.map_or_else(|| data_dir.join(EVAL_PAIRS_FILE), Path::to_path_buf);
    let pairs = load_pairs(&qpath)?;
    if pairs.is_empty() {
        return Err(Error::Empty("query file"));
    }
    let sampler = sampler_with_args(&cfg.sampler, args, &data)?;
    let n = args.n_per_query.unwrap_or(cfg.eval.samples_per_query);
    let rows: Vec<Vec<f32>> = pairs.pairs.iter().map(|p| p.query.clone()).collect();
    let q = Matrix::from_rows(&rows, model.cond_dim());
    for r in &rows {
        if r.len() != model.cond_dim() {
            return Err(Error::dims("query dimension", model.cond_dim(), r.len()));
        }
    }
    let seeds = model.predictor(&sampler).seeds(&q, n)?;
    let mut vecs = Vec::with_capacity(pairs.len() * n);
    let mut recs = Vec::with_capacity(pairs.len() * n);
    for (p, set) in pairs.pairs.iter().zip(seeds) {
        for (j, s) in set.into_iter().enumerate() {
            vecs.push(s);
            recs.push(EmbeddingRecord {
                id: format!("{}#{j}", p.id),
                genre: Some(p.genre),
                target_id: Some(p.target_id.clone()),
                support: None,
            });
        }
    }
    std::fs::create_dir_all(out)?;
    let path = out.join(SAMPLES_FILE);
    save_embeddings(&path, model.dim(), &vecs, &recs)?;
    let side = crate::world::sidecar_path(&path);
    write_json(&out.join("sampler.json"), &sampler)?;
    write_manifest(
        out,
        "sample",
        cfg,
        &[ckpt.to_path_buf(), qpath],
        &[path.clone(), side, out.join("sampler.json")],
        started,
    )?;
    Ok(path)
}

/// What `eval` scores.
#[derive(Debug, Clone)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    Samples(PathBuf),
}

fn eval_context_parts(data: &WorldData) -> Result<(Index, crate::metrics::GaussianMoments)> {
    Ok((Index::build(&data.catalog)?, EvalContext::reference_moments(&data.catalog)?))
}

/// Groups a sample dump back into per-query seed sets, in file order.
fn group_samples(path: &Path, data: &WorldData) -> Result<(Vec<Vec<Vec<f32>>>, Vec<Pair>)> {
    let (_, vecs, recs) = crate::world::load_embeddings(path)?;
    let by_id: HashMap<&str, &Pair> = data
        .train
        .pairs
        .iter()
        .chain(&data.eval.pairs)
        .map(|p| (p.id.as_str(), p))
        .collect();
    let mut seeds: Vec<Vec<Vec<f32>>> = Vec::new();
    let mut pairs: Vec<Pair> = Vec::new();
    for (v, r) in vecs.into_iter().zip(recs) {
        let qid = r.id.rsplit_once('#').map_or(r.id.as_str(), |(q, _)| q);
        if pairs.last().map(|p| p.id.as_str()) != Some(qid) {
            let p = by_id.get(qid).ok_or_else(|| Error::UnknownId(qid.to_string()))?;
            pairs.push((*p).clone());
            seeds.push(Vec::new());
        }
        seeds.last_mut().unwrap().push(v);
    }
    Ok((seeds, pairs))
}

pub fn cmd_eval(cfg: &RunConfig, source: &EvalSource, data_dir: &Path, out: &Path) -> Result<MetricsReport> {
    let started = Instant::now();
    let data = WorldData::load(data_dir)?;
    let (index, reference) = eval_context_parts(&data)?;
    let ctx = EvalContext {
        catalog: &data.catalog,
        index: &index,
        concepts: &data.concepts,
        reference: &reference,
        num_genres: data.num_genres(),
    };
    let (report, input) = match source {
        EvalSource::Checkpoint(p) => {
            let model = TrainedModel::load(p)?;
            (evaluate(model.predictor(&cfg.sampler), &data.eval.pairs, &ctx, &cfg.eval)?, p)
        }
        EvalSource::Samples(p) => {
            let (seeds, pairs) = group_samples(p, &data)?;
            (evaluate_seeds(&seeds, &pairs, &ctx, &cfg.eval)?, p)
        }
    };
    std::fs::create_dir_all(out)?;
    let path = write_json(&out.join(METRICS_FILE), &report.to_flat_json())?;
    let mut inputs = vec![input.clone()];
    inputs.extend(world_inputs(data_dir)?);
    write_manifest(out, "eval", cfg, &inputs, &[path], started)?;
    Ok(report)
}

/// One row of the guidance sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega: f64,
    pub recall_at_10: f64,
    pub triplet_accuracy: f64,
    pub miscs: f64,
    pub entropy_at_10: f64,
    pub entropy_at_20: f64,
    pub entropy_at_50: f64,
}

impl SweepRow {
    pub fn from_report(omega: f64, r: &MetricsReport) -> Self {
        let get = |m: &std::collections::BTreeMap<usize, f64>, k| m.get(&k).copied().unwrap_or(f64::NAN);
        Self {
            omega,
            recall_at_10: get(&r.recall_at, 10),
            triplet_accuracy: r.triplet_accuracy,
            miscs: r.miscs,
            entropy_at_10: get(&r.entropy_at, 10),
            entropy_at_20: get(&r.entropy_at, 20),
            entropy_at_50: get(&r.entropy_at, 50),
        }
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("omega\tR@10\tTA\tMISCS\tH@10\tH@20\tH@50\n");
    for r in rows {
        s.push_str(&format!(
            "{:.1}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n",
            r.omega, r.recall_at_10, r.triplet_accuracy, r.miscs, r.entropy_at_10, r.entropy_at_20, r.entropy_at_50
        ));
    }
    s
}

/// Evaluates the checkpoint at each ω. Points run on the rayon pool; each
/// uses the config's sampler seed, so results do not depend on scheduling.
pub fn sweep(
    model: &TrainedModel,
    data: &WorldData,
    sampler: &SamplerConfig,
    eval: &EvalConfig,
    omegas: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    let (index, reference) = eval_context_parts(data)?;
    let mut eval = eval.clone();
    for k in [10, 20, 50] {
        if !eval.k_list.contains(&k) {
            eval.k_list.push(k);
        }
    }
    eval.k_list.sort_unstable();
    omegas
        .par_iter()
        .map(|&omega| {
            let ctx = EvalContext {
                catalog: &data.catalog,
                index: &index,
                concepts: &data.concepts,
                reference: &reference,
                num_genres: data.num_genres(),
            };
            let s = SamplerConfig {
                omega,
                ..sampler.clone()
            };
            Ok((omega, evaluate(model.predictor(&s), &data.eval.pairs, &ctx, &eval)?))
        })
        .collect()
}

pub fn cmd_sweep(cfg: &RunConfig, ckpt: &Path, data_dir: &Path, omegas: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    let started = Instant::now();
    if omegas.is_empty() {
        return Err(Error::Config("no omega values given".into()));
    }
    let model = TrainedModel::load(ckpt)?;
    let data = WorldData::load(data_dir)?;
    let results = sweep(&model, &data, &cfg.sampler, &cfg.eval, omegas)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for (omega, report) in &results {
        outputs.push(write_json(&out.join(format!("metrics_omega_{omega}.json")), &report.to_flat_json())?);
        rows.push(SweepRow::from_report(*omega, report));
    }
    outputs.push(write_json(&out.join("sweep.json"), &rows)?);
    let tsv = out.join("sweep.tsv");
    std::fs::write(&tsv, sweep_table(&rows))?;
    outputs.push(tsv);
    let mut inputs = vec![ckpt.to_path_buf()];
    inputs.extend(world_inputs(data_dir)?);
    write_manifest(out, "sweep", cfg, &inputs, &outputs, started)?;
    Ok(rows)
}
