//! Steerability statistics for a group of responses: TF-IDF vectorization,
//! seeded k-means, silhouette, cluster purities, optimal-k sweep, and
//! within-cluster deviation.
//!
//! Distance is Euclidean on unit-normalized vectors throughout, so the same
//! metric backs clustering, silhouette, and deviation.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::ResponseRecord;
use crate::diversity::tokenize;

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("need at least 2 texts, got {0}")]
    TooFewTexts(usize),
    #[error("text {0} has no tokens")]
    Untokenizable(String),
    #[error("k={k} out of range 2..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("invalid sweep range {k_min}..={k_max} for {n} documents")]
    BadSweepRange { k_min: usize, k_max: usize, n: usize },
    #[error("silhouette needs at least 2 clusters")]
    TooFewClusters,
    #[error("document {0} has no label")]
    MissingLabel(String),
    #[error("group too small: {n} < {min}")]
    GroupTooSmall { n: usize, min: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub doc_id: String,
    pub values: Vec<f64>,
}

impl DocVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// TF-IDF over the batch vocabulary: raw term counts weighted by
/// `ln((1+N)/(1+df)) + 1`, L2-normalized, vocabulary indexed in
/// lexicographic order.
pub fn tfidf_vectors(texts: &[(String, String)]) -> Result<Vec<DocVector>, SteerError> {
    if texts.len() < 2 {
        return Err(SteerError::TooFewTexts(texts.len()));
    }
    let mut doc_tokens = Vec::with_capacity(texts.len());
    for (doc_id, text) in texts {
        let ts = tokenize(text).map_err(|_| SteerError::Untokenizable(doc_id.clone()))?;
        doc_tokens.push(ts.tokens);
    }

    let mut vocab: Vec<&str> = doc_tokens
        .iter()
        .flat_map(|toks| toks.iter().map(String::as_str))
        .collect();
    vocab.sort_unstable();
    vocab.dedup();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();

    let n_docs = texts.len() as f64;
    let mut df = vec![0usize; vocab.len()];
    for toks in &doc_tokens {
        let mut seen = vec![false; vocab.len()];
        for t in toks {
            let i = index[t.as_str()];
            if !seen[i] {
                seen[i] = true;
                df[i] += 1;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|d| ((1.0 + n_docs) / (1.0 + *d as f64)).ln() + 1.0)
        .collect();

    let mut out = Vec::with_capacity(texts.len());
    for ((doc_id, _), toks) in texts.iter().zip(&doc_tokens) {
        let mut values = vec![0.0; vocab.len()];
        for t in toks {
            values[index[t.as_str()]] += 1.0;
        }
        for (v, w) in values.iter_mut().zip(&idf) {
            *v *= w;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        out.push(DocVector {
            doc_id: doc_id.clone(),
            values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub k: usize,
    /// Cluster index per document, aligned with the input vector order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
}

const MAX_ITERATIONS: usize = 300;

/// Lloyd's algorithm with k-means++ seeding from a seeded RNG. Empty
/// clusters are repaired by reassigning the point farthest from its
/// centroid. Deterministic for fixed (vectors, k, seed).
pub fn kmeans(vectors: &[DocVector], k: usize, seed: u64) -> Result<ClusteringResult, SteerError> {
    let n = vectors.len();
    if k < 2 || k > n {
        return Err(SteerError::KOutOfRange { k, max: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, v) in vectors.iter().enumerate() {
            let best = nearest_centroid(&v.values, &centroids).0;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        repair_empty_clusters(vectors, &mut assignments, &centroids, k);

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&DocVector> = vectors
                .iter()
                .zip(&assignments)
                .filter(|(_, a)| **a == c)
                .map(|(v, _)| v)
                .collect();
            if members.is_empty() {
                continue;
            }
            for slot in centroid.iter_mut() {
                *slot = 0.0;
            }
            for m in &members {
                for (slot, v) in centroid.iter_mut().zip(&m.values) {
                    *slot += v;
                }
            }
            let count = members.len() as f64;
            for slot in centroid.iter_mut() {
                *slot /= count;
            }
        }

        let inertia = compute_inertia(vectors, &assignments, &centroids);
        debug_assert!(
            inertia <= prev_inertia + 1e-9,
            "inertia rose: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;
        if !changed {
            break;
        }
    }

    Ok(ClusteringResult {
        k,
        assignments,
        centroids,
        inertia: prev_inertia,
        seed,
    })
}

fn plus_plus_init(vectors: &[DocVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let first = rng.gen_range(0..n);
    let mut centroids = vec![vectors[first].values.clone()];
    while centroids.len() < k {
        let dists: Vec<f64> = vectors
            .iter()
            .map(|v| {
                centroids
                    .iter()
                    .map(|c| euclidean(&v.values, c))
                    .fold(f64::INFINITY, f64::min)
                    .powi(2)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dists.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(vectors[next].values.clone());
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = euclidean(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn repair_empty_clusters(
    vectors: &[DocVector],
    assignments: &mut [usize],
    centroids: &[Vec<f64>],
    k: usize,
) {
    for c in 0..k {
        if assignments.iter().any(|a| *a == c) {
            continue;
        }
        // Move the point farthest from its current centroid, skipping
        // points that are alone in their cluster.
        let mut farthest: Option<(usize, f64)> = None;
        for (i, v) in vectors.iter().enumerate() {
            let current = assignments[i];
            if assignments.iter().filter(|a| **a == current).count() <= 1 {
                continue;
            }
            let d = euclidean(&v.values, &centroids[current]);
            if farthest.is_none_or(|(_, best)| d > best) {
                farthest = Some((i, d));
            }
        }
        if let Some((i, _)) = farthest {
            assignments[i] = c;
        }
    }
}

fn compute_inertia(vectors: &[DocVector], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    vectors
        .iter()
        .zip(assignments)
        .map(|(v, a)| {
            let d = euclidean(&v.values, &centroids[*a]);
            d * d
        })
        .sum()
}

/// Mean silhouette with Rousseeuw's conventions: singleton clusters score 0,
/// and s(i) = 0 whenever max(a, b) = 0.
pub fn silhouette_score(vectors: &[DocVector], assignments: &[usize]) -> Result<f64, SteerError> {
    let n = vectors.len();
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(SteerError::TooFewClusters);
    }
    let sizes: Vec<usize> = (0..k)
        .map(|c| assignments.iter().filter(|a| **a == c).count())
        .collect();

    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue; // s(i) = 0
        }
        let mut intra = 0.0;
        let mut inter = vec![0.0f64; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclidean(&vectors[i].values, &vectors[j].values);
            if assignments[j] == own {
                intra += d;
            } else {
                inter[assignments[j]] += d;
            }
        }
        let a = intra / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|c| *c != own && sizes[*c] > 0)
            .map(|c| inter[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Fraction of documents covered by their cluster's majority label.
pub fn cluster_purity(
    assignments: &[usize],
    doc_ids: &[String],
    labels: &HashMap<String, String>,
) -> Result<f64, SteerError> {
    let n = assignments.len();
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut majority_sum = 0usize;
    for c in 0..k {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (a, id) in assignments.iter().zip(doc_ids) {
            if *a != c {
                continue;
            }
            let label = labels
                .get(id)
                .ok_or_else(|| SteerError::MissingLabel(id.clone()))?;
            *counts.entry(label.as_str()).or_insert(0) += 1;
        }
        majority_sum += counts.values().copied().max().unwrap_or(0);
    }
    Ok(majority_sum as f64 / n as f64)
}

/// Runs `n_init` seeded k-means per k, keeps the lowest-inertia run, and
/// picks the k with the highest silhouette (ties go to the smaller k).
pub fn optimal_k_sweep(
    vectors: &[DocVector],
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<(usize, ClusteringResult), SteerError> {
    let n = vectors.len();
    if k_min < 2 || k_min > k_max || k_max > n {
        return Err(SteerError::BadSweepRange { k_min, k_max, n });
    }
    const N_INIT: usize = 5;
    let mut best: Option<(f64, usize, ClusteringResult)> = None;
    for k in k_min..=k_max {
        let mut best_run: Option<ClusteringResult> = None;
        for i in 0..N_INIT {
            let run_seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add((k * N_INIT + i) as u64);
            let run = kmeans(vectors, k, run_seed)?;
            if best_run.as_ref().is_none_or(|b| run.inertia < b.inertia) {
                best_run = Some(run);
            }
        }
        let run = best_run.expect("N_INIT > 0");
        let score = silhouette_score(vectors, &run.assignments)?;
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, k, run));
        }
    }
    let (_, k, run) = best.expect("sweep range is non-empty");
    Ok((k, run))
}

/// Mean over clusters of the mean member-to-centroid distance; singletons
/// contribute 0.
pub fn within_cluster_deviation(vectors: &[DocVector], result: &ClusteringResult) -> f64 {
    let mut total = 0.0;
    for (c, centroid) in result.centroids.iter().enumerate() {
        let members: Vec<&DocVector> = vectors
            .iter()
            .zip(&result.assignments)
            .filter(|(_, a)| **a == c)
            .map(|(v, _)| v)
            .collect();
        if members.len() > 1 {
            let mean_dist: f64 = members
                .iter()
                .map(|m| euclidean(&m.values, centroid))
                .sum::<f64>()
                / members.len() as f64;
            total += mean_dist;
        }
    }
    total / result.k as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct SteerabilityReport {
    /// Omitted when the group vocabulary is degenerate.
    pub silhouette: Option<f64>,
    pub content_purity: f64,
    pub persona_purity: f64,
    pub optimal_k: usize,
    pub avg_cluster_size: f64,
    pub within_cluster_deviation: f64,
    pub n_docs: usize,
    pub vector_source: String,
    /// Optimal k is chosen by silhouette maximization; deviation is mean
    /// distance to centroid.
    pub selection_rule: String,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SteerConfig {
    pub k_min: usize,
    /// Default when None: min(N-1, ceil(N/2)).
    pub k_max: Option<usize>,
    pub seed: u64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig {
            k_min: 2,
            k_max: None,
            seed: 0,
        }
    }
}

pub fn steerability_summary(
    group: &[ResponseRecord],
    config: &SteerConfig,
) -> Result<SteerabilityReport, SteerError> {
    let n = group.len();
    let min_size = config.k_min.max(4);
    if n < min_size {
        return Err(SteerError::GroupTooSmall { n, min: min_size });
    }
    let texts: Vec<(String, String)> = group
        .iter()
        .map(|r| (r.id.clone(), r.response_text.clone()))
        .collect();
    let vectors = tfidf_vectors(&texts)?;
    let doc_ids: Vec<String> = vectors.iter().map(|v| v.doc_id.clone()).collect();

    let degenerate = group
        .windows(2)
        .all(|w| w[0].response_text == w[1].response_text);

    let k_max = config
        .k_max
        .unwrap_or_else(|| (n - 1).min(n.div_ceil(2)))
        .min(n)
        .max(config.k_min);
    let (optimal_k, result) = optimal_k_sweep(&vectors, config.k_min, k_max, config.seed)?;

    let content_labels: HashMap<String, String> = group
        .iter()
        .map(|r| (r.id.clone(), r.request_id.clone()))
        .collect();
    let persona_labels: HashMap<String, String> = group
        .iter()
        .map(|r| (r.id.clone(), r.base_persona.clone()))
        .collect();

    let silhouette = if degenerate {
        None
    } else {
        Some(silhouette_score(&vectors, &result.assignments)?)
    };

    Ok(SteerabilityReport {
        silhouette,
        content_purity: cluster_purity(&result.assignments, &doc_ids, &content_labels)?,
        persona_purity: cluster_purity(&result.assignments, &doc_ids, &persona_labels)?,
        optimal_k,
        avg_cluster_size: n as f64 / optimal_k as f64,
        within_cluster_deviation: within_cluster_deviation(&vectors, &result),
        n_docs: n,
        vector_source: "internal-tfidf".to_owned(),
        selection_rule: "silhouette-max; deviation=mean-distance-to-centroid".to_owned(),
        degenerate,
    })
}
