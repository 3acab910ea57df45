//! Proofs that a pseudonym corresponds to a known identifier.
//!
//! A proof carries the identifier's pair index and the authentication path.
//! The verifier recomputes `H(encode(identifier))` from the identifier it
//! already knows — it never accepts a precomputed leaf — folds the path
//! upward, and compares the result against the pseudonym's root in constant
//! time. Nothing in a proof reveals any other identifier in the tree.

use serde::{Deserialize, Serialize};

use crate::identifier::Identifier;
use crate::suite::{Digest, HashSuite};
use crate::tree::{hash_pair, Direction, PathEntry, Pseudonym, PseudonymTree, TreeError};

#[derive(Debug, thiserror::Error)]
#[error("malformed proof: {0}")]
pub struct MalformedProof(pub String);

/// Verification outcome. Reject reasons are deliberately coarse so a
/// verifier oracle does not leak which path level failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    SuiteMismatch,
    LengthMismatch,
    RootMismatch,
}

impl RejectReason {
    pub fn token(self) -> &'static str {
        match self {
            RejectReason::SuiteMismatch => "suite_mismatch",
            RejectReason::LengthMismatch => "length_mismatch",
            RejectReason::RootMismatch => "root_mismatch",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Proof that one identifier belongs to a pseudonym's tree. Contains only
/// digests and indices: no identifier bytes, no key material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwnershipProof {
    pub suite: HashSuite,
    pub leaf_count: usize,
    /// 0-based identifier (leaf pair) index.
    pub identifier_index: usize,
    pub path: Vec<PathEntry>,
}

impl OwnershipProof {
    /// Total digest payload of the path, in bytes.
    pub fn path_digest_bytes(&self) -> usize {
        self.path.iter().map(|e| e.digest.len()).sum()
    }
}

/// Builds the proof for one identifier of a built tree.
pub fn prove(tree: &PseudonymTree, identifier_index: usize) -> Result<OwnershipProof, TreeError> {
    let path = tree.auth_path(identifier_index)?;
    Ok(OwnershipProof {
        suite: tree.suite(),
        leaf_count: tree.leaf_count(),
        identifier_index,
        path,
    })
}

/// The canonical direction sequence for a leaf-pair index: the MAC sibling
/// sits to the right of the hash leaf, and the higher directions follow the
/// binary digits of the pair index.
fn expected_direction(identifier_index: usize, level: usize) -> Direction {
    if level == 0 || (identifier_index >> (level - 1)) & 1 == 0 {
        Direction::Right
    } else {
        Direction::Left
    }
}

/// Verifies that `proof` ties `claimed_identifier` to `pseudonym`.
///
/// Total on untrusted input: every failure maps to a [`RejectReason`]
/// rather than a panic. Index bounds and direction/index consistency are
/// enforced, so relabeling an honest proof with a different index is
/// rejected; such content failures report `RootMismatch`.
pub fn verify(
    pseudonym: &Pseudonym,
    claimed_identifier: &Identifier,
    proof: &OwnershipProof,
) -> Verdict {
    if proof.suite != pseudonym.suite {
        return Verdict::Reject(RejectReason::SuiteMismatch);
    }
    if proof.leaf_count != pseudonym.leaf_count {
        return Verdict::Reject(RejectReason::LengthMismatch);
    }
    if pseudonym.leaf_count < 2 || !pseudonym.leaf_count.is_power_of_two() {
        return Verdict::Reject(RejectReason::LengthMismatch);
    }
    let height = pseudonym.height();
    if proof.path.len() != height {
        return Verdict::Reject(RejectReason::LengthMismatch);
    }
    if proof.identifier_index >= pseudonym.leaf_count / 2 {
        return Verdict::Reject(RejectReason::RootMismatch);
    }
    for (level, entry) in proof.path.iter().enumerate() {
        if entry.direction != expected_direction(proof.identifier_index, level) {
            return Verdict::Reject(RejectReason::RootMismatch);
        }
    }

    let suite = pseudonym.suite;
    let mut digest = suite.hash(&claimed_identifier.encode());
    for entry in &proof.path {
        digest = match entry.direction {
            Direction::Right => hash_pair(suite, &digest, &entry.digest),
            Direction::Left => hash_pair(suite, &entry.digest, &digest),
        };
    }
    if digest.ct_eq(&pseudonym.root) {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::RootMismatch)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProofWire {
    v: u8,
    suite: String,
    leaves: u32,
    index: u32,
    path: Vec<PathEntryWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathEntryWire {
    dir: String,
    h: String,
}

impl OwnershipProof {
    /// Canonical JSON wire form, deterministic for a given proof:
    /// `{"v":1,"suite":...,"leaves":...,"index":...,"path":[{"dir":"L"|"R","h":"<hex>"},...]}`.
    pub fn to_json(&self) -> String {
        let wire = ProofWire {
            v: 1,
            suite: self.suite.token().to_owned(),
            leaves: self.leaf_count as u32,
            index: self.identifier_index as u32,
            path: self
                .path
                .iter()
                .map(|e| PathEntryWire {
                    dir: match e.direction {
                        Direction::Left => "L".to_owned(),
                        Direction::Right => "R".to_owned(),
                    },
                    h: e.digest.to_hex(),
                })
                .collect(),
        };
        serde_json::to_string(&wire).expect("proof wire form serializes")
    }

    /// Strict inverse of [`to_json`](Self::to_json): validates version,
    /// suite, shape, index bounds, directions, and digest lengths.
    pub fn from_json(data: &str) -> Result<Self, MalformedProof> {
        let wire: ProofWire =
            serde_json::from_str(data).map_err(|e| MalformedProof(e.to_string()))?;
        if wire.v != 1 {
            return Err(MalformedProof(format!("unsupported version {}", wire.v)));
        }
        let suite = HashSuite::from_token(&wire.suite)
            .ok_or_else(|| MalformedProof(format!("unknown suite {:?}", wire.suite)))?;
        let leaf_count = wire.leaves as usize;
        if leaf_count < 2 || !leaf_count.is_power_of_two() {
            return Err(MalformedProof(format!(
                "leaf count {leaf_count} is not a power of two >= 2"
            )));
        }
        let identifier_index = wire.index as usize;
        if identifier_index >= leaf_count / 2 {
            return Err(MalformedProof(format!(
                "index {identifier_index} out of range for {leaf_count} leaves"
            )));
        }
        let height = leaf_count.trailing_zeros() as usize;
        if wire.path.len() != height {
            return Err(MalformedProof(format!(
                "path has {} entries, tree height is {height}",
                wire.path.len()
            )));
        }
        let mut path = Vec::with_capacity(wire.path.len());
        for (i, entry) in wire.path.iter().enumerate() {
            let direction = match entry.dir.as_str() {
                "L" => Direction::Left,
                "R" => Direction::Right,
                other => {
                    return Err(MalformedProof(format!(
                        "path entry {i}: direction {other:?} is not \"L\" or \"R\""
                    )))
                }
            };
            let digest = Digest::from_hex(&entry.h, suite.digest_len()).ok_or_else(|| {
                MalformedProof(format!(
                    "path entry {i}: digest must be {} hex-encoded bytes",
                    suite.digest_len()
                ))
            })?;
            path.push(PathEntry { direction, digest });
        }
        Ok(OwnershipProof {
            suite,
            leaf_count,
            identifier_index,
            path,
        })
    }
}
