//! Exact dot-product nearest-neighbor search over a catalog.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{dot, Matrix};
use crate::world::Catalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub genre: usize,
    pub score: f64,
}

/// Ranked hits for one seed. `truncated` is set when fewer than `k` items exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub hits: Vec<Hit>,
    pub truncated: bool,
}

impl Ranked {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }

    pub fn genres(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.genre).collect()
    }
}

/// Immutable row-per-item matrix of catalog embeddings.
#[derive(Debug, Clone)]
pub struct Index {
    matrix: Matrix,
    ids: Vec<String>,
    genres: Vec<usize>,
}

/// Descending score, then ascending id.
fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl Index {
    pub fn build(catalog: &Catalog) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::Empty("catalog"));
        }
        let rows: Vec<_> = catalog.items.iter().map(|i| i.embedding.clone()).collect();
        Ok(Self {
            matrix: Matrix::from_rows(&rows, catalog.dim()),
            ids: catalog.items.iter().map(|i| i.id.clone()).collect(),
            genres: catalog.items.iter().map(|i| i.genre).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn genre_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|p| self.genres[p])
    }

    /// Top-`k` items for one seed.
    pub fn search(&self, seed: &[f32], k: usize) -> Result<Ranked> {
        ensure_dim("retrieval seed", self.dim(), seed.len())?;
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len()).map(|i| (dot(self.matrix.row(i), seed), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order(&(a.0, &self.ids[a.1]), &(b.0, &self.ids[b.1]));
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, cmp);
            scored.truncate(take);
        }
        scored.sort_by(cmp);
        Ok(Ranked {
            hits: scored
                .into_iter()
                .map(|(s, i)| Hit {
                    id: self.ids[i].clone(),
                    genre: self.genres[i],
                    score: s,
                })
                .collect(),
            truncated: k > self.len(),
        })
    }

    /// Independent top-`k` for each seed.
    pub fn top_k(&self, seeds: &[Vec<f32>], k: usize) -> Result<Vec<Ranked>> {
        seeds.iter().map(|s| self.search(s, k)).collect()
    }
}

/// Merge ranked lists by each item's best score; ties by ascending id.
pub fn fuse(lists: &[Ranked], k: usize) -> Result<Ranked> {
    if lists.is_empty() {
        return Err(Error::Empty("ranked lists to fuse"));
    }
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for l in lists {
        for h in &l.hits {
            best.entry(h.id.as_str())
                .and_modify(|e| {
                    if h.score > e.0 {
                        e.0 = h.score
                    }
                })
                .or_insert((h.score, h.genre));
        }
    }
    let mut items: Vec<(&str, f64, usize)> = best.into_iter().map(|(id, (s, g))| (id, s, g)).collect();
    items.sort_by(|a, b| rank_order(&(a.1, a.0), &(b.1, b.0)));
    let truncated = items.len() < k;
    items.truncate(k);
    Ok(Ranked {
        hits: items
            .into_iter()
            .map(|(id, score, genre)| Hit {
                id: id.to_string(),
                genre,
                score,
            })
            .collect(),
        truncated,
    })
}

/// Retrieve per seed and fuse into one list of length `k`.
pub fn retrieve_fused(index: &Index, seeds: &[Vec<f32>], k: usize) -> Result<Ranked> {
    fuse(&index.top_k(seeds, k)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CatalogItem;
    use proptest::prelude::*;

    fn item(id: &str, v: Vec<f32>, g: usize) -> CatalogItem {
        CatalogItem {
            id: id.into(),
            embedding: v,
            genre: g,
        }
    }

    fn catalog() -> Catalog {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        Catalog::new(vec![
            item("a", vec![1.0, 0.0], 0),
            item("b", vec![0.0, 1.0], 1),
            item("c", vec![s, s], 0),
            item("d", vec![-1.0, 0.0], 2),
        ])
        .unwrap()
    }

    #[test]
    fn single_item_catalog() {
        let c = Catalog::new(vec![item("only", vec![0.0, 1.0], 0)]).unwrap();
        let idx = Index::build(&c).unwrap();
        let r = idx.search(&[1.0, 0.0], 1).unwrap();
        assert_eq!(r.ids(), vec!["only"]);
        assert!(!r.truncated);
        assert!(Index::build(&Catalog::default()).is_err());
    }

    #[test]
    fn self_retrieval_and_antipodes() {
        let idx = Index::build(&catalog()).unwrap();
        let r = idx.search(&[0.0, 1.0], 2).unwrap();
        assert_eq!(r.hits[0].id, "b");
        assert!((r.hits[0].score - 1.0).abs() < 1e-12);
        let r = idx.search(&[-1.0, 0.0], 1).unwrap();
        assert_eq!(r.hits[0].id, "d");
    }

    #[test]
    fn ties_break_by_id_and_oversized_k_is_flagged() {
        let c = Catalog::new(vec![item("z", vec![1.0, 0.0], 0), item("y", vec![1.0, 0.0], 1)]).unwrap();
        let idx = Index::build(&c).unwrap();
        let r = idx.search(&[1.0, 0.0], 5).unwrap();
        assert_eq!(r.ids(), vec!["y", "z"]);
        assert!(r.truncated);
    }

    #[test]
    fn multi_seed_equals_per_seed() {
        let idx = Index::build(&catalog()).unwrap();
        let seeds = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        let all = idx.top_k(&seeds, 3).unwrap();
        for (s, r) in seeds.iter().zip(&all) {
            assert_eq!(&idx.search(s, 3).unwrap(), r);
        }
    }

    #[test]
    fn fusion_properties() {
        let idx = Index::build(&catalog()).unwrap();
        let a = idx.search(&[1.0, 0.0], 3).unwrap();
        let b = idx.search(&[0.0, 1.0], 3).unwrap();
        assert_eq!(fuse(&[a.clone()], 3).unwrap().hits, a.hits);
        let f = fuse(&[a.clone(), b], 4).unwrap();
        let ids = f.ids();
        let mut uniq = ids.clone();
        uniq.dedup();
        assert_eq!(ids.len(), uniq.len());
        assert_eq!(&ids[..2], &["a", "b"]);
        assert_eq!(fuse(&[a.clone(), a.clone()], 3).unwrap().hits, a.hits);
        assert!(fuse(&[], 3).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force_sort(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 1..40),
            seed in proptest::collection::vec(-1.0f32..1.0, 3),
            k in 1usize..50,
        ) {
            let items: Vec<_> = rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| crate::tensor::normalized(r).map(|v| item(&format!("i{i:03}"), v, i % 3)))
                .collect();
            prop_assume!(!items.is_empty());
            let cat = Catalog::new(items.clone()).unwrap();
            let idx = Index::build(&cat).unwrap();
            let got = idx.search(&seed, k).unwrap();
            let mut all: Vec<(f64, String)> = items.iter().map(|it| (dot(&it.embedding, &seed), it.id.clone())).collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<String> = all.into_iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(got.hits.iter().map(|h| h.id.clone()).collect::<Vec<_>>(), want);
            prop_assert!(got.hits.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }
}
