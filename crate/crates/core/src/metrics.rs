//! Quality, diversity, alignment and retrieval metrics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{jacobi_eigen, SquareMatrix};
use crate::tensor::dot;
use crate::world::ConceptProxy;

/// Sample mean and (n−1)-normalized covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub covariance: SquareMatrix,
    pub sample_count: usize,
}

pub fn moments<V: AsRef<[f32]>>(vectors: &[V]) -> Result<GaussianMoments> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Config(format!("moments need at least 2 vectors, got {n}")));
    }
    let d = vectors[0].as_ref().len();
    let mut mean = vec![0.0f64; d];
    for v in vectors {
        let v = v.as_ref();
        ensure_dim("moments input", d, v.len())?;
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = SquareMatrix::zeros(d);
    let mut centered = vec![0.0f64; d];
    for v in vectors {
        for ((c, &x), m) in centered.iter_mut().zip(v.as_ref()).zip(&mean) {
            *c = x as f64 - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov.data[i * d + j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.data[i * d + j] / (n - 1) as f64;
            cov.data[i * d + j] = v;
            cov.data[j * d + i] = v;
        }
    }
    Ok(GaussianMoments {
        mean,
        covariance: cov,
        sample_count: n,
    })
}

const SYMMETRY_TOLERANCE: f64 = 1e-6;

/// Principal square root of a symmetric PSD matrix via cyclic Jacobi;
/// negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &SquareMatrix) -> Result<SquareMatrix> {
    if m.asymmetry() > SYMMETRY_TOLERANCE {
        return Err(Error::Config(format!(
            "matrix is not symmetric (relative asymmetry {:.3e})",
            m.asymmetry()
        )));
    }
    let eig = jacobi_eigen(m)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// `tr((Σ_a Σ_b)^{1/2})` through the symmetric form `√Σ_a · Σ_b · √Σ_a`.
fn trace_sqrt_product(a: &SquareMatrix, b: &SquareMatrix) -> Result<f64> {
    let ra = psd_sqrt(a)?;
    let inner = ra.matmul(b).matmul(&ra).symmetrized();
    let eig = jacobi_eigen(&inner)?;
    Ok(eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum())
}

/// Fréchet distance between two Gaussian fits, clamped at 0.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    ensure_dim("frechet distance", a.mean.len(), b.mean.len())?;
    let dmu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr = a.covariance.trace() + b.covariance.trace() - 2.0 * trace_sqrt_product(&a.covariance, &b.covariance)?;
    Ok((dmu + tr).max(0.0))
}

/// FMD of a generated set against reference moments.
pub fn fmd<V: AsRef<[f32]>>(generated: &[V], reference: &GaussianMoments) -> Result<f64> {
    frechet_distance(&moments(generated)?, reference)
}

/// Mean pairwise cosine similarity after rescaling every vector to norm 1.
///
/// Cosines are computed as `⟨a, b⟩ / √(‖a‖²‖b‖²)` in f64, which is exactly 1
/// for identical vectors.
pub fn miscs<V: AsRef<[f32]>>(vectors: &[V]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Config(format!("MISCS needs at least 2 vectors, got {n}")));
    }
    let sq: Vec<f64> = vectors.iter().map(|v| dot(v.as_ref(), v.as_ref())).collect();
    if sq.iter().any(|&s| s == 0.0) {
        return Err(Error::Empty("MISCS input contains a zero vector"));
    }
    let mut acc = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            acc += dot(vectors[i].as_ref(), vectors[j].as_ref()) / (sq[i] * sq[j]).sqrt();
        }
    }
    Ok(2.0 * acc / (n * (n - 1)) as f64)
}

fn mean_paired_dot<A: AsRef<[f32]>, B: AsRef<[f32]>>(pred: &[A], truth: &[B], what: &'static str) -> Result<f64> {
    ensure_dim(what, pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(Error::Empty(what));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        ensure_dim(what, p.len(), t.len())?;
        acc += dot(p, t);
    }
    Ok(acc / pred.len() as f64)
}

/// Music–music alignment: mean `⟨z_pred, z_m⟩` over pairs.
pub fn alignment_m2m<A: AsRef<[f32]>, B: AsRef<[f32]>>(predicted: &[A], ground_truth: &[B]) -> Result<f64> {
    mean_paired_dot(predicted, ground_truth, "M2M pairs")
}

/// Music–caption alignment: mean `⟨z_pred, z_cap⟩` over pairs.
pub fn alignment_m2c<A: AsRef<[f32]>, B: AsRef<[f32]>>(predicted: &[A], captions: &[B]) -> Result<f64> {
    mean_paired_dot(predicted, captions, "M2C pairs")
}

/// Music–image alignment through text as a bridge:
/// `1/|images| · Σ_images Σ_texts ⟨z_i, t_query⟩·⟨z_pred(z_i), t_target⟩`.
pub fn alignment_m2i<A: AsRef<[f32]>, B: AsRef<[f32]>>(
    predicted_for_images: &[A],
    image_vectors: &[B],
    proxies: &[ConceptProxy],
) -> Result<f64> {
    if proxies.is_empty() {
        return Err(Error::Empty("M2I text proxy set"));
    }
    ensure_dim("M2I images", image_vectors.len(), predicted_for_images.len())?;
    if image_vectors.is_empty() {
        return Err(Error::Empty("M2I images"));
    }
    let mut acc = 0.0;
    for (pred, img) in predicted_for_images.iter().zip(image_vectors) {
        let (pred, img) = (pred.as_ref(), img.as_ref());
        for t in proxies {
            ensure_dim("M2I query-space text", img.len(), t.text_vector_query.len())?;
            ensure_dim("M2I target-space text", pred.len(), t.text_vector_target.len())?;
            acc += dot(img, &t.text_vector_query) * dot(pred, &t.text_vector_target);
        }
    }
    Ok(acc / image_vectors.len() as f64)
}

/// One triplet: a prediction, its positive and a negative.
#[derive(Debug, Clone)]
pub struct Triplet<'a> {
    pub pred: &'a [f32],
    pub positive: &'a [f32],
    pub negative: &'a [f32],
}

/// Fraction of triplets with `⟨pred, pos⟩ ≥ ⟨pred, neg⟩`.
pub fn triplet_accuracy(triplets: &[Triplet<'_>]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Empty("triplets"));
    }
    let hits = triplets
        .iter()
        .filter(|t| dot(t.pred, t.positive) >= dot(t.pred, t.negative))
        .count();
    Ok(hits as f64 / triplets.len() as f64)
}

/// Natural-log entropy of the genre histogram of `labels` over `num_genres`.
pub fn entropy_at_k(labels: &[usize], num_genres: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("entropy labels"));
    }
    let mut counts = vec![0usize; num_genres];
    for &l in labels {
        if l >= num_genres {
            return Err(Error::Config(format!("genre label {l} >= {num_genres}")));
        }
        counts[l] += 1;
    }
    let k = labels.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / k;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Relevant items among the first `k` ranked, over all relevant items.
/// `None` when the relevant set is empty.
pub fn recall_at_k<S: AsRef<str>, T: AsRef<str>>(ranked_ids: &[S], relevant_ids: &[T], k: usize) -> Option<f64> {
    let relevant: HashSet<&str> = relevant_ids.iter().map(|s| s.as_ref()).collect();
    if relevant.is_empty() {
        return None;
    }
    let found = ranked_ids
        .iter()
        .take(k)
        .map(|s| s.as_ref())
        .collect::<HashSet<_>>()
        .intersection(&relevant)
        .count();
    Some(found as f64 / relevant.len() as f64)
}

/// Running mean of recall values, counting queries excluded for having no
/// relevant items.
#[derive(Debug, Clone, Default)]
pub struct RecallAccumulator {
    sum: f64,
    count: usize,
    pub excluded: usize,
}

impl RecallAccumulator {
    pub fn push(&mut self, r: Option<f64>) {
        match r {
            Some(v) => {
                self.sum += v;
                self.count += 1;
            }
            None => self.excluded += 1,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Metrics for one evaluation run. Alignment scores are raw dot products in
/// `[−1, 1]`; tables that report them ×100 scale at presentation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fmd: f64,
    pub miscs: f64,
    pub m2i: Option<f64>,
    pub m2m: Option<f64>,
    pub m2c: Option<f64>,
    pub triplet_accuracy: f64,
    pub entropy_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
    pub samples_per_query: usize,
    pub recall_excluded: usize,
}

impl MetricsReport {
    /// Flat JSON object: `entropy@K` / `recall@K` keys, absent alignments omitted.
    pub fn to_flat_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("fmd".into(), self.fmd.into());
        m.insert("miscs".into(), self.miscs.into());
        for (k, v) in [("m2i", self.m2i), ("m2m", self.m2m), ("m2c", self.m2c)] {
            if let Some(v) = v {
                m.insert(k.into(), v.into());
            }
        }
        m.insert("triplet_accuracy".into(), self.triplet_accuracy.into());
        for (k, v) in &self.entropy_at {
            m.insert(format!("entropy@{k}"), (*v).into());
        }
        for (k, v) in &self.recall_at {
            m.insert(format!("recall@{k}"), (*v).into());
        }
        m.insert("num_queries".into(), self.num_queries.into());
        m.insert("samples_per_query".into(), self.samples_per_query.into());
        m.insert("recall_excluded".into(), self.recall_excluded.into());
        Value::Object(m)
    }

    pub fn from_flat_json(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::Format("metrics report is not an object".into()))?;
        let num = |k: &str| obj.get(k).and_then(Value::as_f64);
        let mut r = MetricsReport {
            fmd: num("fmd").ok_or_else(|| Error::Format("missing fmd".into()))?,
            miscs: num("miscs").ok_or_else(|| Error::Format("missing miscs".into()))?,
            m2i: num("m2i"),
            m2m: num("m2m"),
            m2c: num("m2c"),
            triplet_accuracy: num("triplet_accuracy").unwrap_or_default(),
            num_queries: num("num_queries").unwrap_or_default() as usize,
            samples_per_query: num("samples_per_query").unwrap_or_default() as usize,
            recall_excluded: num("recall_excluded").unwrap_or_default() as usize,
            ..Default::default()
        };
        for (key, val) in obj {
            let parse = |p: &str| key.strip_prefix(p).and_then(|k| k.parse::<usize>().ok());
            if let (Some(k), Some(x)) = (parse("entropy@"), val.as_f64()) {
                r.entropy_at.insert(k, x);
            }
            if let (Some(k), Some(x)) = (parse("recall@"), val.as_f64()) {
                r.recall_at.insert(k, x);
            }
        }
        Ok(r)
    }
}
