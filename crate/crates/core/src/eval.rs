//! Seed generation and the full evaluation protocol over a world's pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_rows, DiffusionModel, SamplerConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    alignment_m2c, alignment_m2i, alignment_m2m, entropy_at_k, fmd, miscs, moments, recall_at_k, triplet_accuracy,
    GaussianMoments, MetricsReport, RecallAccumulator, Triplet,
};
use crate::regression::RegressionModel;
use crate::retrieval::{retrieve_fused, Index};
use crate::tensor::{normalized, Matrix};
use crate::world::{Catalog, ConceptProxy, Pair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub samples_per_query: usize,
    /// Evaluate only the first `max_queries` pairs.
    pub max_queries: Option<usize>,
    /// Seeds the choice of triplet negatives.
    pub triplet_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: vec![10, 100],
            samples_per_query: 50,
            max_queries: None,
            triplet_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k_list must be nonempty with positive entries".into()));
        }
        if self.samples_per_query == 0 {
            return Err(Error::Config("samples_per_query must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that turns query embeddings into seed embeddings.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Diffusion {
        model: &'a DiffusionModel,
        sampler: &'a SamplerConfig,
    },
    Regression(&'a RegressionModel),
}

impl Predictor<'_> {
    /// `n` seeds per query row, as produced by the model. Regression repeats
    /// its single raw prediction.
    pub fn seeds(&self, queries: &Matrix, n: usize) -> Result<Vec<Vec<Vec<f32>>>> {
        match self {
            Predictor::Diffusion { model, sampler } => {
                let mut conds = Matrix::zeros(queries.rows * n, queries.cols);
                for r in 0..queries.rows {
                    for j in 0..n {
                        conds.row_mut(r * n + j).copy_from_slice(queries.row(r));
                    }
                }
                let out = sample_rows(*model, &conds, &model.schedule, sampler)?;
                Ok((0..queries.rows)
                    .map(|r| (0..n).map(|j| out.row(r * n + j).to_vec()).collect())
                    .collect())
            }
            Predictor::Regression(m) => {
                let pred = m.predict_batch(queries)?;
                Ok((0..queries.rows).map(|r| vec![pred.row(r).to_vec(); n]).collect())
            }
        }
    }
}

/// Held-out material needed to score seeds.
pub struct EvalContext<'a> {
    pub catalog: &'a Catalog,
    pub index: &'a Index,
    pub concepts: &'a [ConceptProxy],
    pub reference: &'a GaussianMoments,
    pub num_genres: usize,
}

impl<'a> EvalContext<'a> {
    pub fn reference_moments(catalog: &Catalog) -> Result<GaussianMoments> {
        moments(&catalog.embeddings())
    }
}

/// Scores `seeds[i]` (the seeds for `pairs[i]`) against the world.
///
/// Distribution and alignment metrics see the seeds as given; retrieval
/// uses unit-norm copies.
pub fn evaluate_seeds(
    seeds: &[Vec<Vec<f32>>],
    pairs: &[Pair],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if seeds.len() != pairs.len() {
        return Err(Error::dims("seed sets per pair", pairs.len(), seeds.len()));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let idx = ctx.catalog.index_of();
    let max_k = *cfg.k_list.iter().max().unwrap();

    let mut entropy_sum = vec![0.0f64; cfg.k_list.len()];
    let mut recall = vec![RecallAccumulator::default(); cfg.k_list.len()];
    let mut miscs_sum = 0.0;
    let mut pooled = Vec::new();
    let mut truth = Vec::new();
    let mut captions = Vec::new();
    let mut images = Vec::new();
    let mut negatives = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.triplet_seed);

    for (set, pair) in seeds.iter().zip(pairs) {
        let target = &ctx.catalog.items[*idx
            .get(pair.target_id.as_str())
            .ok_or_else(|| Error::UnknownId(pair.target_id.clone()))?];
        miscs_sum += if set.len() >= 2 { miscs(set)? } else { 1.0 };

        let units = set
            .iter()
            .map(|s| normalized(s).ok_or(Error::NonFinite("seed embedding has zero norm".into())))
            .collect::<Result<Vec<_>>>()?;
        let ranked = retrieve_fused(ctx.index, &units, max_k)?;
        for (j, &k) in cfg.k_list.iter().enumerate() {
            let top = &ranked.hits[..k.min(ranked.hits.len())];
            let genres: Vec<usize> = top.iter().map(|h| h.genre).collect();
            entropy_sum[j] += entropy_at_k(&genres, ctx.num_genres)?;
            let ids: Vec<&str> = top.iter().map(|h| h.id.as_str()).collect();
            recall[j].push(recall_at_k(&ids, &[pair.target_id.as_str()], k));
        }

        let negative = loop {
            let cand = &ctx.catalog.items[rng.gen_range(0..ctx.catalog.len())];
            if cand.genre != pair.genre {
                break cand;
            }
        };
        let caption = ctx
            .concepts
            .iter()
            .find(|c| c.genre == pair.genre)
            .ok_or_else(|| Error::UnknownId(format!("genre-{}", pair.genre)))?;
        let image = normalized(&pair.query).ok_or(Error::Empty("zero query vector"))?;
        for s in set {
            pooled.push(s.clone());
            truth.push(target.embedding.clone());
            captions.push(caption.text_vector_target.clone());
            images.push(image.clone());
            negatives.push(&negative.embedding);
        }
    }

    let triplets: Vec<Triplet<'_>> = pooled
        .iter()
        .zip(&truth)
        .zip(&negatives)
        .map(|((p, t), n)| Triplet {
            pred: p,
            positive: t,
            negative: n,
        })
        .collect();
    let n = pairs.len() as f64;
    let mut report = MetricsReport {
        fmd: fmd(&pooled, ctx.reference)?,
        miscs: miscs_sum / n,
        m2i: Some(alignment_m2i(&pooled, &images, ctx.concepts)?),
        m2m: Some(alignment_m2m(&pooled, &truth)?),
        m2c: Some(alignment_m2c(&pooled, &captions)?),
        triplet_accuracy: triplet_accuracy(&triplets)?,
        num_queries: pairs.len(),
        samples_per_query: seeds[0].len(),
        ..Default::default()
    };
    for (j, &k) in cfg.k_list.iter().enumerate() {
        report.entropy_at.insert(k, entropy_sum[j] / n);
        if let Some(r) = recall[j].mean() {
            report.recall_at.insert(k, r);
        }
        report.recall_excluded = report.recall_excluded.max(recall[j].excluded);
    }
    Ok(report)
}

/// Generates seeds for the first `cfg.max_queries` pairs and scores them.
pub fn evaluate(
    predictor: Predictor<'_>,
    pairs: &[Pair],
    ctx: &EvalContext<'_>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let pairs = &pairs[..cfg.max_queries.unwrap_or(pairs.len()).min(pairs.len())];
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let qd = pairs[0].query.len();
    let rows: Vec<Vec<f32>> = pairs.iter().map(|p| p.query.clone()).collect();
    let queries = Matrix::from_rows(&rows, qd);
    let seeds = predictor.seeds(&queries, cfg.samples_per_query)?;
    evaluate_seeds(&seeds, pairs, ctx, cfg)
}
