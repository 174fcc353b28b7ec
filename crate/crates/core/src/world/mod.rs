//! Synthetic joint-embedding world.
//!
//! Targets are unit vectors clustered around `L` genre centroids on the
//! target sphere. Each query is a fixed random linear image of
//! `mean(centroids of a genre support set) + item residual` plus noise: the
//! residual pins down the item, the support set leaves the genre ambiguous
//! among `ambiguity` candidates.

mod emb1;

pub use emb1::{
    decode_emb1, encode_emb1, load_embeddings, load_embeddings_with_dim, save_embeddings, sidecar_path,
    EmbeddingRecord, EMB1_MAGIC,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub target_dim: usize,
    pub query_dim: usize,
    pub num_genres: usize,
    pub items_per_genre: usize,
    /// Inverse relative spread of items around their genre centroid.
    pub cluster_concentration: f64,
    /// Standard deviation of the additive query noise (per unit query norm).
    pub query_noise: f64,
    /// Number of genres a query plausibly matches.
    pub ambiguity: usize,
    /// Queries generated per catalog item.
    pub queries_per_item: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            target_dim: 16,
            query_dim: 24,
            num_genres: 8,
            items_per_genre: 1024,
            cluster_concentration: 2.0,
            query_noise: 0.1,
            ambiguity: 3,
            queries_per_item: 1,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.target_dim < 2 || self.query_dim < 2 {
            return err("world dimensions must be at least 2");
        }
        if self.num_genres < 2 {
            return err("world needs at least 2 genres");
        }
        if !(self.cluster_concentration > 0.0) {
            return err("cluster_concentration must be positive");
        }
        if !(self.query_noise >= 0.0) {
            return err("query_noise must be non-negative");
        }
        if self.ambiguity < 1 || self.ambiguity > self.num_genres {
            return err("ambiguity must lie in [1, num_genres]");
        }
        if self.items_per_genre == 0 || self.queries_per_item == 0 {
            return err("items_per_genre and queries_per_item must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: String,
    pub embedding: Vec<f32>,
    pub genre: usize,
}

/// Retrieval candidates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    pub items: Vec<CatalogItem>,
}

impl Catalog {
    pub fn new(items: Vec<CatalogItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(Error::Format(format!("duplicate catalog id {}", it.id)));
            }
            let n = crate::tensor::norm(&it.embedding);
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Format(format!("catalog item {} has norm {n}", it.id)));
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, |i| i.embedding.len())
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect()
    }

    pub fn embeddings(&self) -> Vec<Vec<f32>> {
        self.items.iter().map(|i| i.embedding.clone()).collect()
    }

    /// Pooled standard deviation of all embedding coordinates.
    pub fn sigma_data(&self) -> f64 {
        let vals = self.items.iter().flat_map(|i| i.embedding.iter().map(|&v| v as f64));
        let (mut n, mut s, mut s2) = (0.0f64, 0.0f64, 0.0f64);
        for v in vals {
            n += 1.0;
            s += v;
            s2 += v * v;
        }
        if n < 2.0 {
            return 0.0;
        }
        let mean = s / n;
        ((s2 / n - mean * mean).max(0.0)).sqrt()
    }
}

/// A genre's text-like concept in both spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProxy {
    pub genre: usize,
    pub text_vector_target: Vec<f32>,
    pub text_vector_query: Vec<f32>,
}

impl ConceptProxy {
    pub fn id(&self) -> String {
        format!("genre-{}", self.genre)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    pub query: Vec<f32>,
    pub target_id: String,
    pub genre: usize,
    /// Genres mixed into the query (contains `genre`).
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedDataset {
    pub pairs: Vec<Pair>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Aligned `(queries, targets)` matrices against `catalog`.
    pub fn matrices(&self, catalog: &Catalog) -> Result<(Matrix, Matrix)> {
        let idx = catalog.index_of();
        let qd = self.pairs.first().map_or(0, |p| p.query.len());
        let mut q = Vec::with_capacity(self.pairs.len());
        let mut z = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let i = *idx
                .get(p.target_id.as_str())
                .ok_or_else(|| Error::UnknownId(p.target_id.clone()))?;
            q.push(p.query.clone());
            z.push(catalog.items[i].embedding.clone());
        }
        Ok((Matrix::from_rows(&q, qd), Matrix::from_rows(&z, catalog.dim())))
    }
}

/// Everything `generate_world` produces, plus the hidden construction state
/// needed by ground-truth oracles.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub catalog: Catalog,
    pub pairs: PairedDataset,
    pub concepts: Vec<ConceptProxy>,
    /// Genre centroids (unit vectors, target space).
    pub centroids: Vec<Vec<f32>>,
    /// Item residuals in catalog order, before normalization.
    pub residuals: Vec<Vec<f32>>,
    /// `query_dim × target_dim` linear map.
    pub query_map: Matrix,
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * std
        })
        .collect()
}

fn unit_f64(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn apply_map(map: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..map.rows)
        .map(|i| map.row(i).iter().zip(v).map(|(&m, x)| m as f64 * x).sum())
        .collect()
}

/// Pure function of the config.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.target_dim;

    let centroids: Vec<Vec<f32>> = (0..cfg.num_genres)
        .map(|_| unit_f64(&gaussian_vec(&mut rng, d, 1.0)))
        .collect();

    let map_std = 1.0 / (d as f64).sqrt();
    let map_data: Vec<f32> = gaussian_vec(&mut rng, cfg.query_dim * d, map_std)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let query_map = Matrix::from_vec(cfg.query_dim, d, map_data);

    let spread = 1.0 / (cfg.cluster_concentration * (d as f64).sqrt());
    let mut items = Vec::new();
    let mut residuals: Vec<Vec<f32>> = Vec::new();
    for g in 0..cfg.num_genres {
        for k in 0..cfg.items_per_genre {
            let r = gaussian_vec(&mut rng, d, spread);
            let raw: Vec<f64> = centroids[g].iter().zip(&r).map(|(&c, x)| c as f64 + x).collect();
            items.push(CatalogItem {
                id: format!("item-{g:02}-{k:04}"),
                embedding: unit_f64(&raw),
                genre: g,
            });
            residuals.push(r.iter().map(|&x| x as f32).collect());
        }
    }

    let noise_std = cfg.query_noise / (cfg.query_dim as f64).sqrt();
    let mut pairs = Vec::new();
    let others: Vec<usize> = (0..cfg.num_genres).collect();
    for (i, item) in items.iter().enumerate() {
        for j in 0..cfg.queries_per_item {
            let mut support = vec![item.genre];
            let mut pool: Vec<usize> = others.iter().copied().filter(|&l| l != item.genre).collect();
            pool.shuffle(&mut rng);
            support.extend(pool.into_iter().take(cfg.ambiguity - 1));
            support.sort_unstable();
            let mut latent: Vec<f64> = residuals[i].iter().map(|&x| x as f64).collect();
            for &l in &support {
                for (a, &c) in latent.iter_mut().zip(&centroids[l]) {
                    *a += c as f64 / cfg.ambiguity as f64;
                }
            }
            let mut q = apply_map(&query_map, &latent);
            for (qv, n) in q.iter_mut().zip(gaussian_vec(&mut rng, cfg.query_dim, noise_std)) {
                *qv += n;
            }
            pairs.push(Pair {
                id: format!("q-{i:05}-{j}"),
                query: q.into_iter().map(|v| v as f32).collect(),
                target_id: item.id.clone(),
                genre: item.genre,
                support,
            });
        }
    }

    let concepts = centroids
        .iter()
        .enumerate()
        .map(|(g, c)| {
            let cf: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            ConceptProxy {
                genre: g,
                text_vector_target: c.clone(),
                text_vector_query: unit_f64(&apply_map(&query_map, &cf)),
            }
        })
        .collect();

    Ok(World {
        config: cfg.clone(),
        catalog: Catalog { items },
        pairs: PairedDataset { pairs },
        concepts,
        centroids,
        residuals,
        query_map,
    })
}

impl World {
    /// Ground-truth posterior over genres for a pair's construction: uniform
    /// over its support set.
    pub fn genre_posterior(&self, pair: &Pair) -> Vec<f64> {
        let mut p = vec![0.0; self.config.num_genres];
        for &g in &pair.support {
            p[g] = 1.0 / pair.support.len() as f64;
        }
        p
    }

    /// `E[z | query construction]`: the mean over the support genres of the
    /// normalized `centroid + residual` candidates (noise-free queries).
    pub fn conditional_mean(&self, pair: &Pair) -> Result<Vec<f32>> {
        let idx = self.catalog.index_of();
        let i = *idx
            .get(pair.target_id.as_str())
            .ok_or_else(|| Error::UnknownId(pair.target_id.clone()))?;
        let r = &self.residuals[i];
        let mut acc = vec![0.0f64; self.config.target_dim];
        for &g in &pair.support {
            let cand: Vec<f64> = self.centroids[g].iter().zip(r).map(|(&c, &x)| c as f64 + x as f64).collect();
            for (a, v) in acc.iter_mut().zip(unit_f64(&cand)) {
                *a += v as f64 / pair.support.len() as f64;
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}

/// Genre-stratified, seed-deterministic split into `(train, eval)`, each
/// in shuffled order.
pub fn split(dataset: &PairedDataset, eval_fraction: f64, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Config(format!("eval_fraction {eval_fraction} outside (0, 1)")));
    }
    let mut by_genre: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in dataset.pairs.iter().enumerate() {
        by_genre.entry(p.genre).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_eval = vec![false; dataset.pairs.len()];
    for idxs in by_genre.values_mut() {
        idxs.shuffle(&mut rng);
        let n_eval = (eval_fraction * idxs.len() as f64).round() as usize;
        for &i in idxs.iter().take(n_eval) {
            is_eval[i] = true;
        }
    }
    // shuffled order makes any prefix a representative subset
    let mut order: Vec<usize> = (0..dataset.pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut train = PairedDataset::default();
    let mut eval = PairedDataset::default();
    for i in order {
        let p = dataset.pairs[i].clone();
        if is_eval[i] {
            eval.pairs.push(p);
        } else {
            train.pairs.push(p);
        }
    }
    Ok((train, eval))
}

// ---- on-disk world directory ----

pub const CATALOG_FILE: &str = "catalog.emb1";
pub const TRAIN_PAIRS_FILE: &str = "pairs_train.emb1";
pub const EVAL_PAIRS_FILE: &str = "pairs_eval.emb1";
pub const CONCEPTS_TARGET_FILE: &str = "concepts_target.emb1";
pub const CONCEPTS_QUERY_FILE: &str = "concepts_query.emb1";
pub const WORLD_CONFIG_FILE: &str = "world.json";

pub fn save_catalog(path: &Path, catalog: &Catalog) -> Result<()> {
    let vecs = catalog.embeddings();
    let recs: Vec<_> = catalog
        .items
        .iter()
        .map(|i| EmbeddingRecord::new(i.id.clone(), Some(i.genre)))
        .collect();
    save_embeddings(path, catalog.dim(), &vecs, &recs)
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let (_, vecs, recs) = load_embeddings(path)?;
    let items = vecs
        .into_iter()
        .zip(recs)
        .map(|(embedding, r)| {
            let genre = r
                .genre
                .ok_or_else(|| Error::Format(format!("catalog row {} lacks a genre", r.id)))?;
            Ok(CatalogItem { id: r.id, embedding, genre })
        })
        .collect::<Result<Vec<_>>>()?;
    Catalog::new(items)
}

pub fn save_pairs(path: &Path, query_dim: usize, pairs: &PairedDataset) -> Result<()> {
    let vecs: Vec<_> = pairs.pairs.iter().map(|p| p.query.clone()).collect();
    let recs: Vec<_> = pairs
        .pairs
        .iter()
        .map(|p| EmbeddingRecord {
            id: p.id.clone(),
            genre: Some(p.genre),
            target_id: Some(p.target_id.clone()),
            support: Some(p.support.clone()),
        })
        .collect();
    save_embeddings(path, query_dim, &vecs, &recs)
}

pub fn load_pairs(path: &Path) -> Result<PairedDataset> {
    let (_, vecs, recs) = load_embeddings(path)?;
    let pairs = vecs
        .into_iter()
        .zip(recs)
        .map(|(query, r)| {
            let genre = r.genre.ok_or_else(|| Error::Format(format!("pair {} lacks a genre", r.id)))?;
            let target_id = r
                .target_id
                .ok_or_else(|| Error::Format(format!("pair {} lacks a target_id", r.id)))?;
            Ok(Pair {
                id: r.id,
                query,
                target_id,
                genre,
                support: r.support.unwrap_or_else(|| vec![genre]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedDataset { pairs })
}

pub fn save_concepts(dir: &Path, concepts: &[ConceptProxy]) -> Result<()> {
    let recs: Vec<_> = concepts.iter().map(|c| EmbeddingRecord::new(c.id(), Some(c.genre))).collect();
    let t: Vec<_> = concepts.iter().map(|c| c.text_vector_target.clone()).collect();
    let q: Vec<_> = concepts.iter().map(|c| c.text_vector_query.clone()).collect();
    let td = t.first().map_or(0, Vec::len);
    let qd = q.first().map_or(0, Vec::len);
    save_embeddings(&dir.join(CONCEPTS_TARGET_FILE), td, &t, &recs)?;
    save_embeddings(&dir.join(CONCEPTS_QUERY_FILE), qd, &q, &recs)
}

pub fn load_concepts(dir: &Path) -> Result<Vec<ConceptProxy>> {
    let (_, t, recs) = load_embeddings(&dir.join(CONCEPTS_TARGET_FILE))?;
    let (_, q, recs_q) = load_embeddings(&dir.join(CONCEPTS_QUERY_FILE))?;
    if recs != recs_q {
        return Err(Error::Format("concept sidecars disagree".into()));
    }
    t.into_iter()
        .zip(q)
        .zip(recs)
        .map(|((tv, qv), r)| {
            Ok(ConceptProxy {
                genre: r.genre.ok_or_else(|| Error::Format(format!("concept {} lacks a genre", r.id)))?,
                text_vector_target: tv,
                text_vector_query: qv,
            })
        })
        .collect()
}

/// A world as stored on disk: catalog, train/eval pairs and concepts.
#[derive(Debug, Clone)]
pub struct WorldData {
    pub config: Option<WorldConfig>,
    pub catalog: Catalog,
    pub train: PairedDataset,
    pub eval: PairedDataset,
    pub concepts: Vec<ConceptProxy>,
}

impl WorldData {
    pub fn from_world(world: &World, eval_fraction: f64, seed: u64) -> Result<Self> {
        let (train, eval) = split(&world.pairs, eval_fraction, seed)?;
        Ok(Self {
            config: Some(world.config.clone()),
            catalog: world.catalog.clone(),
            train,
            eval,
            concepts: world.concepts.clone(),
        })
    }

    pub fn num_genres(&self) -> usize {
        self.concepts.len()
    }

    pub fn query_dim(&self) -> usize {
        self.train
            .pairs
            .first()
            .or(self.eval.pairs.first())
            .map_or(0, |p| p.query.len())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_catalog(&dir.join(CATALOG_FILE), &self.catalog)?;
        let qd = self.query_dim();
        save_pairs(&dir.join(TRAIN_PAIRS_FILE), qd, &self.train)?;
        save_pairs(&dir.join(EVAL_PAIRS_FILE), qd, &self.eval)?;
        save_concepts(dir, &self.concepts)?;
        if let Some(cfg) = &self.config {
            std::fs::write(dir.join(WORLD_CONFIG_FILE), serde_json::to_vec_pretty(cfg)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(WORLD_CONFIG_FILE);
        let config = if cfg_path.exists() {
            Some(serde_json::from_slice(&std::fs::read(cfg_path)?)?)
        } else {
            None
        };
        Ok(Self {
            config,
            catalog: load_catalog(&dir.join(CATALOG_FILE))?,
            train: load_pairs(&dir.join(TRAIN_PAIRS_FILE))?,
            eval: load_pairs(&dir.join(EVAL_PAIRS_FILE))?,
            concepts: load_concepts(dir)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::norm;

    fn small() -> WorldConfig {
        WorldConfig {
            items_per_genre: 10,
            queries_per_item: 2,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn catalog_and_concepts_are_unit_norm() {
        let w = generate_world(&small()).unwrap();
        assert_eq!(w.catalog.len(), 80);
        for it in &w.catalog.items {
            assert!((norm(&it.embedding) - 1.0).abs() < 1e-5);
        }
        for c in &w.concepts {
            assert!((norm(&c.text_vector_target) - 1.0).abs() < 1e-5);
            assert!((norm(&c.text_vector_query) - 1.0).abs() < 1e-5);
        }
        assert_eq!(w.concepts.len(), 8);
        Catalog::new(w.catalog.items.clone()).unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.concepts, b.concepts);
        let c = generate_world(&WorldConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.catalog, c.catalog);
    }

    #[test]
    fn supports_contain_the_true_genre() {
        let w = generate_world(&small()).unwrap();
        for p in &w.pairs.pairs {
            assert_eq!(p.support.len(), 3);
            assert!(p.support.contains(&p.genre));
        }
        let one = generate_world(&WorldConfig { ambiguity: 1, ..small() }).unwrap();
        assert!(one.pairs.pairs.iter().all(|p| p.support == vec![p.genre]));
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let w = generate_world(&small()).unwrap();
        let (tr, ev) = split(&w.pairs, 0.25, 3).unwrap();
        assert_eq!(tr.len() + ev.len(), w.pairs.len());
        let ids: HashSet<_> = tr.pairs.iter().chain(&ev.pairs).map(|p| p.id.clone()).collect();
        assert_eq!(ids.len(), w.pairs.len());
        for g in 0..8 {
            let total = w.pairs.pairs.iter().filter(|p| p.genre == g).count() as f64;
            let n_eval = ev.pairs.iter().filter(|p| p.genre == g).count() as f64;
            assert!((n_eval - 0.25 * total).abs() <= 1.0);
        }
        let (tr2, ev2) = split(&w.pairs, 0.25, 3).unwrap();
        assert_eq!((tr, ev), (tr2, ev2));
        assert!(split(&w.pairs, 0.0, 0).is_err());
        assert!(split(&w.pairs, 1.0, 0).is_err());
    }

    #[test]
    fn world_directory_round_trip() {
        let w = generate_world(&small()).unwrap();
        let data = WorldData::from_world(&w, 0.2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.save(dir.path()).unwrap();
        let back = WorldData::load(dir.path()).unwrap();
        assert_eq!(back.catalog, data.catalog);
        assert_eq!(back.train, data.train);
        assert_eq!(back.eval, data.eval);
        assert_eq!(back.concepts, data.concepts);
        assert_eq!(back.config, data.config);
    }

    #[test]
    fn sigma_data_near_inverse_sqrt_dim() {
        let w = generate_world(&WorldConfig { items_per_genre: 40, ..WorldConfig::default() }).unwrap();
        let s = w.catalog.sigma_data();
        assert!(s > 0.15 && s < 0.3, "{s}");
    }
}
