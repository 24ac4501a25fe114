//! Embed, reduce and cluster with a per-cluster size cap.

pub mod assign;
pub mod gmm;
pub mod reduce;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{assign_with_cap, partition_exact};
pub use gmm::{fit_gmm, GmmModel};
pub use reduce::{reduce, ReducedMatrix};

use crate::model::{BuildConfig, Fact, LevelSizing};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("input vectors have inconsistent or zero dimension")]
    DimensionMismatch,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("cannot fit {requested} components to {rows} rows")]
    BadComponentCount { requested: usize, rows: usize },
    #[error("fact {0} has no embedding")]
    MissingEmbedding(String),
    #[error("nothing to cluster")]
    Empty,
}

/// SplitMix64 finalizer over `seed ^ salt`, used to derive independent
/// sub-seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per input item, in input order.
    pub labels: Vec<usize>,
    /// Cluster id to member ids, members in input order.
    pub clusters: BTreeMap<usize, Vec<String>>,
}

impl ClusterAssignment {
    fn from_groups(ids: &[String], groups: &[Vec<usize>]) -> Self {
        let mut labels = vec![0; ids.len()];
        let mut clusters = BTreeMap::new();
        for (c, g) in groups.iter().enumerate() {
            for &i in g {
                labels[i] = c;
            }
            clusters.insert(c, g.iter().map(|&i| ids[i].clone()).collect());
        }
        Self { labels, clusters }
    }

    /// Member indices per cluster, ordered by cluster id.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.values().map(Vec::len).max().unwrap_or(0)
    }
}

/// `max(1, floor(n / k))`.
pub fn initial_cluster_count(n_items: usize, k: usize) -> usize {
    (n_items / k.max(1)).max(1)
}

fn to_f64(vectors: &[&[f32]]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| v.iter().map(|&x| f64::from(x)).collect()).collect()
}

/// Strict-cap clustering: `initial_cluster_count` mixture components, then
/// every cluster split down to at most `k` members.
pub fn cluster_vectors(ids: &[String], vectors: &[&[f32]], cfg: &BuildConfig) -> Result<ClusterAssignment, ClusterError> {
    match ids.len() {
        0 => Err(ClusterError::Empty),
        1 => Ok(ClusterAssignment::from_groups(ids, &[vec![0]])),
        n => {
            let m = reduce(&to_f64(vectors), cfg.reducer, cfg.reducer_dims, cfg.seed)?;
            let model = fit_gmm(&m, initial_cluster_count(n, cfg.max_cluster_size), mix_seed(cfg.seed, 1))?;
            let groups = assign_with_cap(&model, &m, cfg.max_cluster_size, mix_seed(cfg.seed, 2));
            Ok(ClusterAssignment::from_groups(ids, &groups))
        }
    }
}

/// Exactly `initial_cluster_count` clusters; the per-cluster bound relaxes to
/// `ceil(n / count)` when `n` exceeds `count * k`.
pub fn cluster_vectors_exact(ids: &[String], vectors: &[&[f32]], cfg: &BuildConfig) -> Result<ClusterAssignment, ClusterError> {
    match ids.len() {
        0 => Err(ClusterError::Empty),
        1 => Ok(ClusterAssignment::from_groups(ids, &[vec![0]])),
        n => {
            let target = initial_cluster_count(n, cfg.max_cluster_size);
            if target == 1 {
                return Ok(ClusterAssignment::from_groups(ids, &[(0..n).collect()]));
            }
            let m = reduce(&to_f64(vectors), cfg.reducer, cfg.reducer_dims, cfg.seed)?;
            let groups = partition_exact(&m, target, cfg.max_cluster_size, mix_seed(cfg.seed, 3));
            Ok(ClusterAssignment::from_groups(ids, &groups))
        }
    }
}

/// Clusters items according to `cfg.level_sizing`.
pub fn cluster_for_level(ids: &[String], vectors: &[&[f32]], cfg: &BuildConfig) -> Result<ClusterAssignment, ClusterError> {
    match cfg.level_sizing {
        LevelSizing::Exact => cluster_vectors_exact(ids, vectors, cfg),
        LevelSizing::StrictCap => cluster_vectors(ids, vectors, cfg),
    }
}

fn fact_inputs(facts: &[Fact]) -> Result<(Vec<String>, Vec<&[f32]>), ClusterError> {
    let mut ids = Vec::with_capacity(facts.len());
    let mut vectors = Vec::with_capacity(facts.len());
    for f in facts {
        let e = f.embedding.as_ref().ok_or_else(|| ClusterError::MissingEmbedding(f.fact_id.clone()))?;
        ids.push(f.fact_id.clone());
        vectors.push(e.values());
    }
    Ok((ids, vectors))
}

/// Reduce, fit a mixture with `initial_cluster_count` components and enforce
/// the size cap `k`.
pub fn cluster_facts(facts: &[Fact], cfg: &BuildConfig) -> Result<ClusterAssignment, ClusterError> {
    let (ids, vectors) = fact_inputs(facts)?;
    cluster_vectors(&ids, &vectors, cfg)
}

/// Fact clustering under `cfg.level_sizing`.
pub fn cluster_facts_for_level(facts: &[Fact], cfg: &BuildConfig) -> Result<ClusterAssignment, ClusterError> {
    let (ids, vectors) = fact_inputs(facts)?;
    cluster_for_level(&ids, &vectors, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;

    #[test]
    fn initial_counts() {
        assert_eq!(initial_cluster_count(36, 6), 6);
        assert_eq!(initial_cluster_count(5, 6), 1);
        assert_eq!(initial_cluster_count(100, 6), 16);
    }

    fn topic_facts() -> (Vec<Fact>, Vec<usize>) {
        let topics = [
            ["guitar", "chords", "strumming"],
            ["sourdough", "baking", "flour"],
            ["marathon", "running", "sneakers"],
            ["tomatoes", "garden", "compost"],
            ["python", "programming", "compiler"],
            ["kayak", "river", "paddle"],
        ];
        let gw = Gateway::mock(1);
        let mut facts = Vec::new();
        let mut truth = Vec::new();
        for (t, words) in topics.iter().enumerate() {
            for i in 0..6 {
                let text = format!("{} {} {} note{i}", words[0], words[1], words[2]);
                facts.push(Fact {
                    fact_id: format!("t{t}-{i}"),
                    source_session_id: "s".into(),
                    embedding: Some(gw.embed_one(&text).unwrap()),
                    text,
                    token_count: 1,
                });
                truth.push(t);
            }
        }
        (facts, truth)
    }

    fn purity(labels: &[usize], truth: &[usize]) -> f64 {
        let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
        for (&l, &t) in labels.iter().zip(truth) {
            *counts.entry(l).or_default().entry(t).or_default() += 1;
        }
        counts.values().map(|m| *m.values().max().unwrap()).sum::<usize>() as f64 / labels.len() as f64
    }

    #[test]
    fn topics_are_recovered() {
        let (facts, truth) = topic_facts();
        let a = cluster_facts(&facts, &BuildConfig::default()).unwrap();
        assert_eq!(a.clusters.len(), 6);
        assert!(a.max_cluster_size() <= 6);
        assert!(purity(&a.labels, &truth) >= 0.8);

        let cfg = BuildConfig { reducer: crate::model::ReducerKind::Pca, ..BuildConfig::default() };
        let a = cluster_facts(&facts, &cfg).unwrap();
        assert!(a.max_cluster_size() <= 6);
        assert!(purity(&a.labels, &truth) >= 0.8);
    }

    #[test]
    fn single_fact_short_circuits() {
        let (facts, _) = topic_facts();
        let a = cluster_facts(&facts[..1], &BuildConfig::default()).unwrap();
        assert_eq!(a.labels, [0]);
        assert_eq!(a.clusters[&0], ["t0-0"]);
    }

    #[test]
    fn deterministic() {
        let (facts, _) = topic_facts();
        let cfg = BuildConfig::default();
        assert_eq!(cluster_facts(&facts, &cfg).unwrap(), cluster_facts(&facts, &cfg).unwrap());
    }

    #[test]
    fn missing_embedding_is_reported() {
        let (mut facts, _) = topic_facts();
        facts[3].embedding = None;
        assert_eq!(cluster_facts(&facts, &BuildConfig::default()), Err(ClusterError::MissingEmbedding("t0-3".into())));
    }
}
