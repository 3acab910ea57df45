//! Build/verify timing and proof-size measurements.
//!
//! For each N in {2, 4, 8, ..., max_n} plus max_n itself, the harness
//! builds a tree over N synthetic identifiers and times the build and one
//! proof verification: 3 warmup runs, then the median of the timed
//! repetitions on a monotonic clock. Sizes are exact, timings are
//! environment-dependent.

use serde::Serialize;
use std::time::Instant;

use merkle_pseudonym::{prove, verify, HashSuite, PseudonymTree, Verdict};

use crate::synthetic_identifiers;

/// Guard against accidental huge runs; far beyond the scheme's intended
/// identifier counts.
pub const MAX_BENCH_N: usize = 4096;

const WARMUP_RUNS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("max_n {0} exceeds the guard of {MAX_BENCH_N}")]
    MaxNTooLarge(usize),
    #[error("max_n must be at least 1")]
    MaxNZero,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub leaves: usize,
    pub suite: String,
    pub build_ms: f64,
    pub verify_ms: f64,
    pub proof_bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Fixed CSV layout: `n,leaves,suite,build_ms,verify_ms,proof_bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,leaves,suite,build_ms,verify_ms,proof_bytes\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.3},{:.3},{}\n",
                row.n, row.leaves, row.suite, row.build_ms, row.verify_ms, row.proof_bytes
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("bench rows serialize")
    }
}

/// Runs the benchmark over N in {2, 4, 8, ...} up to and including `max_n`.
pub fn run_bench(
    max_n: usize,
    suite: HashSuite,
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    if max_n == 0 {
        return Err(BenchError::MaxNZero);
    }
    if max_n > MAX_BENCH_N {
        return Err(BenchError::MaxNTooLarge(max_n));
    }
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }

    let mut sizes: Vec<usize> = std::iter::successors(Some(2usize), |n| n.checked_mul(2))
        .take_while(|n| *n <= max_n)
        .collect();
    if sizes.last() != Some(&max_n) {
        sizes.push(max_n);
    }

    let rows = sizes
        .into_iter()
        .map(|n| measure(n, suite, repetitions))
        .collect();
    Ok(BenchReport { rows })
}

fn measure(n: usize, suite: HashSuite, repetitions: usize) -> BenchRow {
    let identifiers = synthetic_identifiers(n);
    let key = suite.random_key().expect("entropy source available");

    let build = || {
        PseudonymTree::build(suite, key.clone(), identifiers.clone())
            .expect("bench identifiers build")
    };

    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(build());
    }
    let mut build_times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(build());
        build_times.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let tree = build();
    let pseudonym = tree.root();
    let index = n / 2;
    let proof = prove(&tree, index).expect("index in range");
    let claimed = &tree.identifiers()[index];

    for _ in 0..WARMUP_RUNS {
        assert_eq!(
            std::hint::black_box(verify(&pseudonym, claimed, &proof)),
            Verdict::Accept
        );
    }
    let mut verify_times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(verify(&pseudonym, claimed, &proof));
        verify_times.push(start.elapsed().as_secs_f64() * 1e3);
    }

    BenchRow {
        n,
        leaves: tree.leaf_count(),
        suite: suite.token().to_owned(),
        build_ms: median(&mut build_times),
        verify_ms: median(&mut verify_times),
        proof_bytes: proof.path_digest_bytes(),
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}
