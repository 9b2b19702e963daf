//! Uncertainty-aware cluster sampling.
//!
//! Samples are partitioned with k-means over their embeddings; each cluster's
//! uncertainty is the mean rollout divergence of a few sampled members; the
//! training budget is then split with the polynomial weights
//! `(S_i + alpha)^beta / sum_j (S_j + alpha)^beta`, floored and capped at the
//! cluster size.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::normalized_edit_distance;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_SAMPLES_PER_CLUSTER: usize = 8;
pub const DEFAULT_UNSTABLE_DELTA: u32 = 5;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} exceeds the {m} available samples")]
    TooManyClusters { k: usize, m: usize },
    #[error("embedding rows must be non-empty, finite and of equal dimension: {0}")]
    Embeddings(String),
    #[error("sample {id:?} has {count} rollouts; at least 2 are required")]
    TooFewRollouts { id: String, count: usize },
    #[error("alpha and beta must be non-negative and finite")]
    Parameters,
    #[error("{0} cluster scores supplied for {1} cluster sizes")]
    Lengths(usize, usize),
    #[error("all (S_j + alpha) are zero with beta > 0: weights are undefined")]
    DegenerateWeights,
    #[error("invalid uncertainty score {0}")]
    Score(f64),
    #[error("sample id sets differ between thresholds: {0}")]
    MismatchedIds(String),
    #[error("embeddings file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self, PlanError> {
        if ids.len() != vectors.len() {
            return Err(PlanError::Embeddings(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        if let Some(d) = vectors.first().map(Vec::len) {
            if d == 0 || vectors.iter().any(|v| v.len() != d) {
                return Err(PlanError::Embeddings("inconsistent dimension".into()));
            }
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PlanError::Embeddings("non-finite entry".into()));
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Little-endian `M: u32, e: u32` header followed by `M * e` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len() * self.dim() * 4);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.vectors.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self, PlanError> {
        if bytes.len() < 8 {
            return Err(PlanError::Format("missing 8-byte header".into()));
        }
        let m = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let e = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = &bytes[8..];
        let expected = m
            .checked_mul(e)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| PlanError::Format("header overflows".into()))?;
        if body.len() != expected {
            return Err(PlanError::Format(format!(
                "header says {m}x{e} ({expected} bytes), body has {} bytes",
                body.len()
            )));
        }
        let vectors = body
            .chunks_exact(4 * e.max(1))
            .take(m)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect();
        Self::new(ids, vectors)
    }

    /// Reads the binary matrix and its sidecar JSON id list.
    pub fn load(matrix: &Path, ids: &Path) -> Result<Self, PlanError> {
        let bytes = std::fs::read(matrix)?;
        let ids: Vec<String> = serde_json::from_str(&std::fs::read_to_string(ids)?)?;
        Self::from_bytes(&bytes, ids)
    }
}

/// Default location of the id list next to an embeddings matrix:
/// `emb.bin` -> `emb.ids.json`.
pub fn sidecar_path(matrix: &Path) -> std::path::PathBuf {
    matrix.with_extension("ids.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - y).powi(2)).sum()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Seeded k-means++ initialisation followed by Lloyd iterations until the
/// assignment stops changing or `max_iter` is reached. Clusters that lose all
/// members are reseeded with the point farthest from its centroid.
pub fn kmeans(data: &EmbeddingSet, k: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment, PlanError> {
    let m = data.len();
    if k == 0 {
        return Err(PlanError::ZeroK);
    }
    if k > m {
        return Err(PlanError::TooManyClusters { k, m });
    }
    let pts = &data.vectors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = vec![to_f64(&pts[rng.random_range(0..m)])];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                // rounding walked off the end; take the last positive weight
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // duplicates only: any point not already a centre
            rng.random_range(0..m)
        };
        let c = to_f64(&pts[next]);
        for (w, p) in d2.iter_mut().zip(pts) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let labels = pts
            .iter()
            .map(|p| {
                let (best, d) = centroids
                    .iter()
                    .enumerate()
                    .map(|(c, ctr)| (c, sq_dist(p, ctr)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                inertia += d;
                best
            })
            .collect();
        (labels, inertia)
    };

    let (mut labels, mut inertia) = assign(&centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let dim = data.dim();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s += f64::from(x);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let (mut new_labels, mut new_inertia) = assign(&centroids);
        repair_empty(pts, &mut centroids, &mut new_labels);
        if repaired_changed(&new_labels, k) {
            let (l, i) = assign(&centroids);
            new_labels = l;
            new_inertia = i;
        }
        let changed = new_labels != labels;
        labels = new_labels;
        inertia = new_inertia;
        history.push(inertia);
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment {
        centroids,
        labels,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn repaired_changed(labels: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    labels.iter().for_each(|&l| seen[l] = true);
    !seen.iter().all(|&s| s)
}

/// Moves the centroid of every empty cluster onto the point farthest from
/// its current centroid, taking that point out of its old cluster.
fn repair_empty(pts: &[Vec<f32>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..pts.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&pts[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(&pts[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            });
        let Some(far) = far else { return };
        centroids[empty] = to_f64(&pts[far]);
        labels[far] = empty;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub per_cluster: Vec<f64>,
    /// Rollouts used per scored sample (minimum across samples).
    pub rollout_count: usize,
    /// Number of samples scored per cluster.
    pub sampled: Vec<usize>,
}

/// Mean pairwise normalized edit distance between rollouts of one sample.
pub fn rollout_divergence(rollouts: &[String]) -> Result<f64, usize> {
    let n = rollouts.len();
    if n < 2 {
        return Err(n);
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += normalized_edit_distance(&rollouts[i], &rollouts[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Per-cluster uncertainty: draws up to `per_cluster` members uniformly
/// without replacement from those that have rollouts, and averages their
/// divergence. Clusters with no rollouts at all score 0.
pub fn uncertainty(
    rollouts: &HashMap<String, Vec<String>>,
    ids: &[String],
    clusters: &ClusterAssignment,
    per_cluster: usize,
    seed: u64,
) -> Result<UncertaintyScore, PlanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_u64.rotate_left(32));
    let mut scores = Vec::with_capacity(clusters.k());
    let mut sampled = Vec::with_capacity(clusters.k());
    let mut min_rollouts = usize::MAX;
    for c in 0..clusters.k() {
        let candidates: Vec<&String> = clusters
            .members(c)
            .into_iter()
            .map(|i| &ids[i])
            .filter(|id| rollouts.contains_key(*id))
            .collect();
        let take = per_cluster.min(candidates.len());
        let mut picks: Vec<usize> = sample_indices(&mut rng, candidates.len(), take).into_vec();
        picks.sort_unstable();
        let mut sum = 0.0;
        for &p in &picks {
            let id = candidates[p];
            let outs = &rollouts[id];
            let div = rollout_divergence(outs).map_err(|count| PlanError::TooFewRollouts {
                id: id.clone(),
                count,
            })?;
            min_rollouts = min_rollouts.min(outs.len());
            sum += div;
        }
        scores.push(if take == 0 { 0.0 } else { sum / take as f64 });
        sampled.push(take);
    }
    Ok(UncertaintyScore {
        per_cluster: scores,
        rollout_count: if min_rollouts == usize::MAX { 0 } else { min_rollouts },
        sampled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub size: usize,
    pub uncertainty: f64,
    pub allocated: usize,
}

/// Plan file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub clusters: Vec<ClusterPlan>,
    pub budget: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl SamplingPlan {
    pub fn allocations(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.allocated).collect()
    }

    pub fn total(&self) -> usize {
        self.clusters.iter().map(|c| c.allocated).sum()
    }
}

/// Normalized polynomial weights `(S_i + alpha)^beta / sum_j (...)`.
pub fn allocation_weights(scores: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>, PlanError> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(PlanError::Parameters);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(PlanError::Score(bad));
    }
    let raw: Vec<f64> = scores.iter().map(|s| (s + alpha).powf(beta)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(PlanError::DegenerateWeights);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Splits `budget` across clusters. Without `redistribute` the result is
/// exactly `min(floor(w_i * budget), |C_i|)`; with it, the budget left over
/// by floors and caps is handed out one sample at a time in descending
/// weight order, never exceeding a cluster's size.
pub fn allocate(
    scores: &[f64],
    sizes: &[usize],
    budget: usize,
    alpha: f64,
    beta: f64,
    redistribute: bool,
) -> Result<SamplingPlan, PlanError> {
    if scores.len() != sizes.len() {
        return Err(PlanError::Lengths(scores.len(), sizes.len()));
    }
    let weights = allocation_weights(scores, alpha, beta)?;
    let mut alloc: Vec<usize> = weights
        .iter()
        .zip(sizes)
        .map(|(w, &size)| ((w * budget as f64).floor() as usize).min(size))
        .collect();

    if redistribute {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let mut left = budget.saturating_sub(alloc.iter().sum());
        while left > 0 {
            let mut progressed = false;
            for &c in &order {
                if left == 0 {
                    break;
                }
                if alloc[c] < sizes[c] {
                    alloc[c] += 1;
                    left -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    Ok(SamplingPlan {
        clusters: scores
            .iter()
            .zip(sizes)
            .zip(alloc)
            .map(|((&u, &size), allocated)| ClusterPlan {
                size,
                uncertainty: u,
                allocated,
            })
            .collect(),
        budget,
        alpha,
        beta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableReport {
    pub flagged: Vec<String>,
    /// Samples where the high-threshold count exceeded the low one.
    pub inverted: Vec<String>,
}

/// Flags samples whose detection count drops by at least `delta` between
/// the low and the high confidence threshold.
pub fn flag_unstable(
    low: &BTreeMap<String, u32>,
    high: &BTreeMap<String, u32>,
    delta: u32,
) -> Result<UnstableReport, PlanError> {
    if low.len() != high.len() || low.keys().any(|k| !high.contains_key(k)) {
        let only_low: Vec<_> = low.keys().filter(|k| !high.contains_key(*k)).collect();
        let only_high: Vec<_> = high.keys().filter(|k| !low.contains_key(*k)).collect();
        return Err(PlanError::MismatchedIds(format!(
            "only at low threshold: {only_low:?}; only at high threshold: {only_high:?}"
        )));
    }
    let mut flagged = Vec::new();
    let mut inverted = Vec::new();
    for (id, &lo) in low {
        let hi = high[id];
        if hi > lo {
            tracing::warn!(sample = %id, low = lo, high = hi, "more detections at the high threshold");
            inverted.push(id.clone());
        } else if lo - hi >= delta {
            flagged.push(id.clone());
        }
    }
    Ok(UnstableReport { flagged, inverted })
}
