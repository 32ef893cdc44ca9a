//! Exact top-k cosine search and majority-vote classification.
//!
//! Search runs in two stages. A fast f32 pass scores every record (a blocked
//! dot-product loop for one query, SGEMM for a block of queries) and keeps a
//! size-k best-set. Every record whose f32 score lies within the rigorous
//! rounding bound of the k-th best is then rescored in f64 and the final
//! ranking is taken from those exact scores. The result equals a full f64
//! scan no matter how queries were batched or scheduled.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::store::{norm, ReferenceIndex, MIN_NORM};

pub const DEFAULT_K: usize = 5;

/// Queries scored together by one SGEMM call.
const QUERY_BLOCK: usize = 128;
const LANES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub label: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub k: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

impl ClassifierConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        Ok(Self { k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub votes: BTreeMap<String, usize>,
    pub neighbors: Vec<Neighbor>,
    /// Rank-1 minus rank-2 similarity; 0 with fewer than two neighbors.
    pub margin: f64,
    pub effective_k: usize,
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), actual: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na >= MIN_NORM && nb >= MIN_NORM) {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Query normalized in f64, with an f32 copy for the fast pass.
struct PreparedQuery {
    exact: Vec<f64>,
    fast: Vec<f32>,
}

fn prepare(query: &[f32], index: &ReferenceIndex) -> Result<PreparedQuery> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.len() != index.dim() {
        return Err(Error::DimMismatch { expected: index.dim(), actual: query.len() });
    }
    if let Some(i) = query.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = norm(query);
    if !(n >= MIN_NORM) {
        return Err(Error::ZeroVector);
    }
    let exact: Vec<f64> = query.iter().map(|&x| x as f64 / n).collect();
    let fast = exact.iter().map(|&x| x as f32).collect();
    Ok(PreparedQuery { exact, fast })
}

/// Upper bound on |f32 score − f64 score| for unit vectors of this dimension:
/// summation error plus rounding of the query, with headroom.
fn fast_pass_error(dim: usize) -> f64 {
    (dim as f64 + 2.0) * f32::EPSILON as f64 * 1.01
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; LANES];
    let (ca, ra) = (a.chunks_exact(LANES), a.chunks_exact(LANES).remainder());
    let cb = b.chunks_exact(LANES);
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f32 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

#[inline]
fn dot_exact(stored: &[f32], query: &[f64]) -> f64 {
    stored.iter().zip(query).map(|(&s, &q)| s as f64 * q).sum()
}

/// Fast scores of one query against every record.
fn scan(index: &ReferenceIndex, q: &[f32]) -> Vec<f32> {
    (0..index.len()).map(|id| dot_f32(index.vector(id), q)).collect()
}

/// Min-heap entry so the heap top is the weakest of the current best-set.
#[derive(PartialEq)]
struct Weakest(f32);

impl Eq for Weakest {}

impl PartialOrd for Weakest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weakest {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}

/// Turns one row of fast scores into the exact ranked top-k.
fn refine(scores: &[f32], query: &PreparedQuery, index: &ReferenceIndex, k: usize) -> Vec<Neighbor> {
    let k = k.min(scores.len());
    let mut best: BinaryHeap<Weakest> = BinaryHeap::with_capacity(k + 1);
    for &s in scores {
        if best.len() < k {
            best.push(Weakest(s));
        } else if s > best.peek().expect("k >= 1").0 {
            best.pop();
            best.push(Weakest(s));
        }
    }
    let kth = best.peek().expect("k >= 1").0 as f64;
    let cutoff = kth - 2.0 * fast_pass_error(index.dim());
    let mut candidates: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s as f64 >= cutoff)
        .map(|(id, _)| (dot_exact(index.vector(id), &query.exact), id))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    candidates.truncate(k);
    candidates
        .into_iter()
        .map(|(sim, id)| Neighbor { id, label: index.label_of(id).to_owned(), similarity: sim.clamp(-1.0, 1.0) })
        .collect()
}

/// The `min(k, len)` most similar records, by descending similarity then ascending id.
pub fn top_k(query: &[f32], index: &ReferenceIndex, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let q = prepare(query, index)?;
    let scores = scan(index, &q.fast);
    Ok(refine(&scores, &q, index, k))
}

/// Scores a block of prepared queries against the whole index with one SGEMM.
fn search_block(block: &[&PreparedQuery], index: &ReferenceIndex, k: usize) -> Vec<Vec<Neighbor>> {
    let (m, n, d) = (block.len(), index.len(), index.dim());
    let mut a = Vec::with_capacity(m * d);
    for q in block {
        a.extend_from_slice(&q.fast);
    }
    let mut scores = vec![0f32; m * n];
    // scores (m×n) = queries (m×d) · indexᵀ (d×n); the index is row-major n×d
    unsafe {
        matrixmultiply::sgemm(
            m, d, n,
            1.0,
            a.as_ptr(), d as isize, 1,
            index.matrix().as_ptr(), 1, d as isize,
            0.0,
            scores.as_mut_ptr(), n as isize, 1,
        );
    }
    block
        .iter()
        .zip(scores.chunks_exact(n))
        .map(|(q, row)| refine(row, q, index, k))
        .collect()
}

/// `top_k` for many queries. Failures are reported per query; the rest complete.
pub fn batch_top_k<Q>(queries: &[Q], index: &ReferenceIndex, k: usize, exec: Execution) -> Vec<Result<Vec<Neighbor>>>
where
    Q: AsRef<[f32]> + Sync,
{
    if k == 0 {
        return queries.iter().map(|_| Err(Error::InvalidConfig("k must be >= 1".into()))).collect();
    }
    let prepared: Vec<Result<PreparedQuery>> = queries.iter().map(|q| prepare(q.as_ref(), index)).collect();
    let valid: Vec<(usize, &PreparedQuery)> =
        prepared.iter().enumerate().filter_map(|(i, p)| p.as_ref().ok().map(|p| (i, p))).collect();
    let blocks: Vec<&[(usize, &PreparedQuery)]> = valid.chunks(QUERY_BLOCK).collect();
    let results = exec.map(&blocks, |block| {
        let qs: Vec<&PreparedQuery> = block.iter().map(|(_, q)| *q).collect();
        search_block(&qs, index, k)
    });
    let mut out: Vec<Option<Vec<Neighbor>>> = vec![None; queries.len()];
    for (block, found) in blocks.iter().zip(results) {
        for ((i, _), neighbors) in block.iter().zip(found) {
            out[*i] = Some(neighbors);
        }
    }
    prepared
        .into_iter()
        .zip(out)
        .enumerate()
        .map(|(index, (p, n))| match p {
            Ok(_) => Ok(n.expect("every valid query was searched")),
            Err(e) => Err(Error::BatchItem { index, source: Box::new(e) }),
        })
        .collect()
}

/// Majority vote over ranked neighbors. Vote ties go to the tied class holding
/// the most similar neighbor, then to the larger summed similarity, then to
/// the lexicographically smallest label.
pub fn vote(neighbors: Vec<Neighbor>) -> Result<Prediction> {
    if neighbors.is_empty() {
        return Err(Error::EmptyIndex);
    }
    struct Tally {
        votes: usize,
        best: f64,
        sum: f64,
    }
    let mut tally: BTreeMap<&str, Tally> = BTreeMap::new();
    for n in &neighbors {
        let t = tally.entry(n.label.as_str()).or_insert(Tally { votes: 0, best: f64::NEG_INFINITY, sum: 0.0 });
        t.votes += 1;
        t.best = t.best.max(n.similarity);
        t.sum += n.similarity;
    }
    // BTreeMap iterates labels in ascending order, so on a full tie the first wins
    let (winner, _) = tally
        .iter()
        .reduce(|acc, cur| {
            let (a, b) = (acc.1, cur.1);
            let better = b
                .votes
                .cmp(&a.votes)
                .then(b.best.total_cmp(&a.best))
                .then(b.sum.total_cmp(&a.sum));
            if better == Ordering::Greater { cur } else { acc }
        })
        .expect("non-empty");
    let label = (*winner).to_owned();
    let votes = tally.iter().map(|(l, t)| ((*l).to_owned(), t.votes)).collect();
    let margin = if neighbors.len() >= 2 { neighbors[0].similarity - neighbors[1].similarity } else { 0.0 };
    let effective_k = neighbors.len();
    Ok(Prediction { label, votes, neighbors, margin, effective_k })
}

pub fn classify(query: &[f32], index: &ReferenceIndex, config: &ClassifierConfig) -> Result<Prediction> {
    vote(top_k(query, index, config.k)?)
}

/// Classifies every query; output order matches input order for any execution mode.
pub fn batch_classify<Q>(
    queries: &[Q],
    index: &ReferenceIndex,
    config: &ClassifierConfig,
    exec: Execution,
) -> Vec<Result<Prediction>>
where
    Q: AsRef<[f32]> + Sync,
{
    batch_top_k(queries, index, config.k, exec)
        .into_iter()
        .map(|r| r.and_then(vote))
        .collect()
}
