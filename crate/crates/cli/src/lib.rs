//! Support library for the `mp` command line tool: the benchmark harness
//! and small helpers shared with the integration tests.

pub mod bench;

use merkle_pseudonym::Identifier;

/// Deterministic synthetic identifiers for benchmarking: one per subject,
/// all in one bench-local domain.
pub fn synthetic_identifiers(n: usize) -> Vec<Identifier> {
    (0..n)
        .map(|i| {
            Identifier::from_strings("org.bench.example", &[&format!("subject-{i:05}")])
                .expect("synthetic identifiers are valid")
        })
        .collect()
}
