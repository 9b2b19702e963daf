//! Reading-order decoding from pairwise precedence scores.
//!
//! Layout queries are projected into a relational space and compared pairwise:
//! `S[i][j] = (f(q_i, q_j) - f(q_j, q_i)) / sqrt(d_h)` with
//! `f(a, b) = (W_q a) . (W_k b)`. A positive `S[i][j]` means element `i` is
//! read before element `j`. Each element collects the votes
//! `V_j = sum_{i != j} sigmoid(S[i][j])` of the elements preceding it, and the
//! reading order is the ascending sort of those votes.

use serde::{Deserialize, Serialize};

/// Absolute anti-symmetry tolerance for matrices that did not come from
/// [`score_relations`].
pub const EXTERNAL_TOLERANCE: f64 = 1e-9;
/// Symmetrization corrections larger than this are reported.
pub const CORRECTION_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrderError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("relation matrix is not anti-symmetric: S[{i}][{j}] + S[{j}][{i}] = {residual}")]
    NotAntiSymmetric { i: usize, j: usize, residual: f64 },
    #[error("invalid permutation: {0}")]
    Permutation(String),
    #[error("margin must be positive, got {0}")]
    Margin(f64),
}

/// `N` refined query embeddings of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<Vec<f64>>,
}

impl QuerySet {
    pub fn new(queries: Vec<Vec<f64>>) -> Result<Self, OrderError> {
        if let Some(d) = queries.first().map(Vec::len) {
            if let Some(bad) = queries.iter().position(|q| q.len() != d) {
                return Err(OrderError::Dimension(format!(
                    "query {bad} has dimension {}, expected {d}",
                    queries[bad].len()
                )));
            }
        }
        if queries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OrderError::NonFinite("queries"));
        }
        Ok(Self { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.queries.first().map(Vec::len)
    }
}

/// Query and key projections, each stored row-major as `d` rows of `d_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWeights {
    pub w_q: Vec<Vec<f64>>,
    pub w_k: Vec<Vec<f64>>,
}

impl ProjectionWeights {
    pub fn new(w_q: Vec<Vec<f64>>, w_k: Vec<Vec<f64>>) -> Result<Self, OrderError> {
        let d = w_q.len();
        if d == 0 || w_k.len() != d {
            return Err(OrderError::Dimension(format!(
                "W_q has {d} rows, W_k has {} rows",
                w_k.len()
            )));
        }
        let d_h = w_q[0].len();
        if d_h == 0 {
            return Err(OrderError::Dimension("hidden dimension must be positive".into()));
        }
        if w_q.iter().chain(&w_k).any(|r| r.len() != d_h) {
            return Err(OrderError::Dimension(format!(
                "projection rows must all have length {d_h}"
            )));
        }
        if w_q.iter().chain(&w_k).flatten().any(|v| !v.is_finite()) {
            return Err(OrderError::NonFinite("projection weights"));
        }
        Ok(Self { w_q, w_k })
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q[0].len()
    }

    fn project(w: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
        let d_h = w[0].len();
        let mut out = vec![0.0; d_h];
        for (qi, row) in q.iter().zip(w) {
            for (o, wv) in out.iter_mut().zip(row) {
                *o += qi * wv;
            }
        }
        out
    }
}

/// Square matrix of precedence scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    n: usize,
    data: Vec<f64>,
}

/// Exchange form `{"n": int, "s": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrixFile {
    pub n: usize,
    pub s: Vec<Vec<f64>>,
}

impl RelationMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).take(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Largest `|S[i][j] + S[j][i]|` over all pairs, diagonal included.
    pub fn antisymmetry_residual(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.n {
            for j in i..self.n {
                let r = (self.get(i, j) + self.get(j, i)).abs();
                if r > worst.0 {
                    worst = (r, i, j);
                }
            }
        }
        worst
    }

    /// Permutes rows and columns: element `k` of the result is element
    /// `perm[k]` of `self`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n);
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                out.set(a, b, self.get(pa, pb));
            }
        }
        out
    }

    /// Builds a matrix from an external source, projecting it onto the
    /// anti-symmetric matrices via `(S - S^T) / 2`. Returns the largest
    /// correction applied.
    pub fn from_external(file: &RelationMatrixFile) -> Result<(Self, f64), OrderError> {
        let n = file.n;
        if file.s.len() != n || file.s.iter().any(|r| r.len() != n) {
            return Err(OrderError::Dimension(format!("expected a {n}x{n} matrix")));
        }
        if file.s.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OrderError::NonFinite("relation matrix"));
        }
        let mut m = Self::zeros(n);
        let mut correction: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = (file.s[i][j] - file.s[j][i]) / 2.0;
                correction = correction.max((v - file.s[i][j]).abs());
                m.set(i, j, v);
            }
        }
        if correction > CORRECTION_WARN {
            tracing::warn!(correction, "relation matrix symmetrized");
        }
        Ok((m, correction))
    }

    pub fn to_file(&self) -> RelationMatrixFile {
        RelationMatrixFile {
            n: self.n,
            s: self.rows(),
        }
    }

    /// Wraps raw rows without symmetrizing; used by tests and callers that
    /// want the tolerance check in [`vote`] to apply.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, OrderError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(OrderError::Dimension(format!("expected a {n}x{n} matrix")));
        }
        Ok(Self {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl Serialize for RelationMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = RelationMatrixFile::deserialize(d)?;
        RelationMatrix::from_external(&file)
            .map(|(m, _)| m)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingOrder {
    /// `ranks[k]` is the index of the k-th element to read.
    pub ranks: Vec<usize>,
    pub votes: Vec<f64>,
}

impl ReadingOrder {
    /// Position of each element in the reading sequence.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.ranks.len()];
        for (k, &e) in self.ranks.iter().enumerate() {
            pos[e] = k;
        }
        pos
    }
}

pub fn score_relations(queries: &QuerySet, weights: &ProjectionWeights) -> Result<RelationMatrix, OrderError> {
    let n = queries.len();
    if let Some(d) = queries.dim() {
        if d != weights.input_dim() {
            return Err(OrderError::Dimension(format!(
                "queries have dimension {d}, projections expect {}",
                weights.input_dim()
            )));
        }
    }
    let scale = (weights.hidden_dim() as f64).sqrt();
    let pq: Vec<Vec<f64>> = queries
        .queries
        .iter()
        .map(|q| ProjectionWeights::project(&weights.w_q, q))
        .collect();
    let pk: Vec<Vec<f64>> = queries
        .queries
        .iter()
        .map(|q| ProjectionWeights::project(&weights.w_k, q))
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut s = RelationMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (dot(&pq[i], &pk[j]) - dot(&pq[j], &pk[i])) / scale;
            if !v.is_finite() {
                return Err(OrderError::NonFinite("relation scores"));
            }
            s.set(i, j, v);
            s.set(j, i, -v);
        }
    }
    Ok(s)
}

/// Logistic function, branching on sign so neither side overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn vote(relations: &RelationMatrix) -> Result<ReadingOrder, OrderError> {
    let (residual, i, j) = relations.antisymmetry_residual();
    if residual > EXTERNAL_TOLERANCE {
        return Err(OrderError::NotAntiSymmetric { i, j, residual });
    }
    let n = relations.n();
    let votes: Vec<f64> = (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| sigmoid(relations.get(i, j))).sum())
        .collect();
    let mut ranks: Vec<usize> = (0..n).collect();
    // stable: equal votes keep ascending index order
    ranks.sort_by(|&a, &b| votes[a].total_cmp(&votes[b]));
    Ok(ReadingOrder { ranks, votes })
}

/// Fixture generator: `+margin` where `true_perm` reads `i` before `j`.
pub fn order_from_margin_matrix(true_perm: &[usize], margin: f64) -> Result<RelationMatrix, OrderError> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(OrderError::Margin(margin));
    }
    let n = true_perm.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &e) in true_perm.iter().enumerate() {
        if e >= n || pos[e] != usize::MAX {
            return Err(OrderError::Permutation(format!("{true_perm:?}")));
        }
        pos[e] = k;
    }
    let mut s = RelationMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s.set(i, j, if pos[i] < pos[j] { margin } else { -margin });
            }
        }
    }
    Ok(s)
}
