//! Synthetic search benchmark with a brute-force correctness check.

use std::time::Instant;

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsearch::knn::batch_top_k;
use refsearch::{top_k, Execution, Neighbor, ReferenceIndex};
use serde::Serialize;

/// Queries checked against the oracle before timing starts.
pub const ORACLE_QUERIES: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub count: usize,
    pub dim: usize,
    pub k: usize,
    pub queries: usize,
    pub threads: usize,
    pub mode: &'static str,
    pub oracle_checked: usize,
    pub throughput_qps: f64,
    pub latency_p50_us: f64,
    pub latency_p90_us: f64,
    pub latency_p99_us: f64,
}

/// Exhaustive scan in f64 over every record. Used as the reference result.
pub fn brute_force(query: &[f32], index: &ReferenceIndex, k: usize) -> Vec<(usize, f64)> {
    let n: f64 = query.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let q: Vec<f64> = query.iter().map(|&x| x as f64 / n).collect();
    let mut all: Vec<(usize, f64)> = (0..index.len())
        .map(|id| (id, index.vector(id).iter().zip(&q).map(|(&s, &q)| s as f64 * q).sum::<f64>()))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// True when ids and order agree and similarities match to `tol`.
pub fn matches_oracle(found: &[Neighbor], oracle: &[(usize, f64)], tol: f64) -> bool {
    found.len() == oracle.len()
        && found.iter().zip(oracle).all(|(n, (id, s))| n.id == *id && (n.similarity - s.clamp(-1.0, 1.0)).abs() <= tol)
}

pub fn random_vectors(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}

pub fn random_index(count: usize, dim: usize, classes: usize, seed: u64) -> Result<ReferenceIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = ReferenceIndex::with_dim(dim);
    for (i, v) in random_vectors(count, dim, &mut rng).iter().enumerate() {
        index.add(v, &format!("c{}", i % classes.max(1)), None)?;
    }
    Ok(index)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank]
}

pub fn run(index: &ReferenceIndex, queries: &[Vec<f32>], k: usize, exec: Execution) -> Result<BenchReport> {
    if queries.is_empty() {
        bail!("bench needs at least one query");
    }
    let checked = ORACLE_QUERIES.min(queries.len());
    for (i, q) in queries.iter().take(checked).enumerate() {
        let found = top_k(q, index, k)?;
        if !matches_oracle(&found, &brute_force(q, index, k), 0.0) {
            bail!("query {i}: result differs from the brute-force scan");
        }
    }

    // untimed pass so page faults and allocator growth stay out of the measurement
    std::hint::black_box(batch_top_k(queries, index, k, exec));
    let start = Instant::now();
    let batch = batch_top_k(queries, index, k, exec);
    let elapsed = start.elapsed().as_secs_f64();
    for r in batch {
        r?;
    }

    let mut latencies: Vec<f64> = Vec::with_capacity(queries.len());
    for q in queries {
        let t = Instant::now();
        std::hint::black_box(top_k(q, index, k)?);
        latencies.push(t.elapsed().as_secs_f64() * 1e6);
    }
    latencies.sort_by(f64::total_cmp);

    Ok(BenchReport {
        count: index.len(),
        dim: index.dim(),
        k,
        queries: queries.len(),
        threads: match exec {
            Execution::Sequential => 1,
            Execution::Parallel => refsearch::par::threads(),
        },
        mode: match exec {
            Execution::Sequential => "sequential",
            Execution::Parallel => "parallel",
        },
        oracle_checked: checked,
        throughput_qps: queries.len() as f64 / elapsed.max(1e-9),
        latency_p50_us: percentile(&latencies, 50.0),
        latency_p90_us: percentile(&latencies, 90.0),
        latency_p99_us: percentile(&latencies, 99.0),
    })
}
