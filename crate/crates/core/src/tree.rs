//! Keyed Merkle tree over a user's identifiers.
//!
//! For N identifiers the tree has one leaf *pair* per identifier: the even
//! leaf `2j` carries `H(encode(id_j))` and the odd leaf `2j+1` carries
//! `H_k(encode(id_j))` under the user's secret key `k`. Every inner node is
//! the hash of the concatenation of its children, and the root digest is the
//! pseudonym. Using a different key per context yields a different,
//! unlinkable pseudonym over the same identifiers.
//!
//! When N is not a power of two the tree is padded up to `2^(m+1)` leaves
//! for the smallest `m` with `N < 2^m`. Pad leaves are keyed-PRF outputs of
//! their slot index, so a tree is reproducible from `(key, identifiers)`
//! alone without storing pad values.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::identifier::Identifier;
use crate::suite::{CryptoError, Digest, HashSuite, MacKey};

/// Pad-leaf preimage prefix. Encoded identifiers always start with the
/// encoding version byte 0x01, so pad preimages can never collide with them.
const PAD_PREFIX: &[u8] = b"\x00pad";

/// Hard cap on identifiers per tree; twice the target of the scheme's
/// intended deployments and far below any memory concern.
pub const MAX_IDENTIFIERS: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("at least one identifier is required")]
    NoIdentifiers,
    #[error("too many identifiers: {0} (max {MAX_IDENTIFIERS})")]
    TooManyIdentifiers(usize),
    #[error("identifiers {first} and {second} have identical encodings")]
    DuplicateIdentifier { first: usize, second: usize },
    #[error("identifier index {index} out of range for {count} identifiers")]
    IndexOutOfRange { index: usize, count: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("malformed pseudonym: {0}")]
    MalformedPseudonym(String),
}

/// Leaf layout for a given number of identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafPlan {
    /// Total leaves; always a power of two >= 2.
    pub leaf_count: usize,
    /// Number of real identifiers (each occupying a leaf pair).
    pub identifier_slots: usize,
    /// Leaves filled with keyed padding: `leaf_count - 2 * identifier_slots`.
    pub pad_slots: usize,
}

/// Computes the leaf layout: `2N` leaves when `N` is a power of two,
/// otherwise `2^(m+1)` for the smallest `m` with `N < 2^m`.
pub fn plan_leaves(n_identifiers: usize) -> LeafPlan {
    assert!(n_identifiers >= 1, "at least one identifier is required");
    let leaf_count = 2 * n_identifiers.next_power_of_two();
    LeafPlan {
        leaf_count,
        identifier_slots: n_identifiers,
        pad_slots: leaf_count - 2 * n_identifiers,
    }
}

/// Which side a sibling digest occupies when recomputing the parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

/// One authentication-path step: the sibling digest and the side it
/// concatenates on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathEntry {
    pub direction: Direction,
    pub digest: Digest,
}

/// The fully built tree. Private to the user: it holds the secret MAC key
/// and the identifiers themselves. Organisations only ever see the
/// [`Pseudonym`] and [`PathEntry`] digests.
pub struct PseudonymTree {
    suite: HashSuite,
    key: MacKey,
    identifiers: Vec<Identifier>,
    /// levels[0] are the leaves; the top level holds exactly the root.
    levels: Vec<Vec<Digest>>,
}

impl PseudonymTree {
    /// Builds the tree over `identifiers` in the given order. The order is
    /// part of the pseudonym's definition: re-deriving the same pseudonym
    /// requires the same list in the same order.
    pub fn build(
        suite: HashSuite,
        key: MacKey,
        identifiers: Vec<Identifier>,
    ) -> Result<Self, TreeError> {
        if identifiers.is_empty() {
            return Err(TreeError::NoIdentifiers);
        }
        if identifiers.len() > MAX_IDENTIFIERS {
            return Err(TreeError::TooManyIdentifiers(identifiers.len()));
        }

        let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut encodings = Vec::with_capacity(identifiers.len());
        for (i, id) in identifiers.iter().enumerate() {
            let enc = id.encode();
            if let Some(&first) = seen.get(&enc) {
                return Err(TreeError::DuplicateIdentifier { first, second: i });
            }
            seen.insert(enc.clone(), i);
            encodings.push(enc);
        }

        let plan = plan_leaves(identifiers.len());
        let mut leaves = Vec::with_capacity(plan.leaf_count);
        for enc in &encodings {
            leaves.push(suite.hash(enc));
            leaves.push(suite.mac(&key, enc)?);
        }
        for slot in 2 * plan.identifier_slots..plan.leaf_count {
            let mut preimage = Vec::with_capacity(PAD_PREFIX.len() + 8);
            preimage.extend_from_slice(PAD_PREFIX);
            preimage.extend_from_slice(&(slot as u64).to_be_bytes());
            leaves.push(suite.mac(&key, &preimage)?);
        }

        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let below = levels.last().unwrap();
            let mut above = Vec::with_capacity(below.len() / 2);
            for pair in below.chunks(2) {
                above.push(hash_pair(suite, &pair[0], &pair[1]));
            }
            levels.push(above);
        }

        Ok(PseudonymTree {
            suite,
            key,
            identifiers,
            levels,
        })
    }

    pub fn suite(&self) -> HashSuite {
        self.suite
    }

    pub fn identifiers(&self) -> &[Identifier] {
        &self.identifiers
    }

    pub fn identifier_count(&self) -> usize {
        self.identifiers.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    /// Tree height: `log2(leaf_count)`, the length of every auth path.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    /// Read-only view of all levels, leaves first. Digests only.
    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    pub(crate) fn key_bytes(&self) -> &[u8] {
        self.key.as_bytes()
    }

    /// Projects the public pseudonym: root digest plus public parameters.
    pub fn root(&self) -> Pseudonym {
        Pseudonym {
            suite: self.suite,
            leaf_count: self.leaf_count(),
            root: self.levels.last().unwrap()[0],
        }
    }

    /// Authentication path for one identifier: exactly `height` sibling
    /// digests. Entry 0 is always the identifier's MAC leaf (the even hash
    /// leaf comes first in each pair, so its sibling sits on the right);
    /// each later entry is the sibling one level up.
    pub fn auth_path(&self, identifier_index: usize) -> Result<Vec<PathEntry>, TreeError> {
        if identifier_index >= self.identifiers.len() {
            return Err(TreeError::IndexOutOfRange {
                index: identifier_index,
                count: self.identifiers.len(),
            });
        }
        let mut pos = 2 * identifier_index;
        let mut path = Vec::with_capacity(self.height());
        for level in &self.levels[..self.height()] {
            let sibling = pos ^ 1;
            path.push(PathEntry {
                direction: if sibling > pos {
                    Direction::Right
                } else {
                    Direction::Left
                },
                digest: level[sibling],
            });
            pos /= 2;
        }
        Ok(path)
    }
}

impl std::fmt::Debug for PseudonymTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudonymTree")
            .field("suite", &self.suite)
            .field("identifiers", &self.identifiers.len())
            .field("leaf_count", &self.leaf_count())
            .field("root", &self.levels.last().unwrap()[0])
            .finish_non_exhaustive()
    }
}

/// Inner-node rule: hash of the two children's digests concatenated.
pub(crate) fn hash_pair(suite: HashSuite, left: &Digest, right: &Digest) -> Digest {
    let mut buf = Vec::with_capacity(left.len() + right.len());
    buf.extend_from_slice(left.as_bytes());
    buf.extend_from_slice(right.as_bytes());
    suite.hash(&buf)
}

/// The public pseudonym: the root digest and the parameters a verifier
/// needs. Contains no secret material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pseudonym {
    pub suite: HashSuite,
    pub leaf_count: usize,
    pub root: Digest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudonymWire {
    v: u8,
    suite: String,
    leaves: u32,
    root: String,
}

impl Pseudonym {
    /// Tree height implied by the leaf count.
    pub fn height(&self) -> usize {
        self.leaf_count.trailing_zeros() as usize
    }

    /// Canonical JSON wire form:
    /// `{"v":1,"suite":"mp-sha256","leaves":8,"root":"<lowercase hex>"}`.
    pub fn to_json(&self) -> String {
        let wire = PseudonymWire {
            v: 1,
            suite: self.suite.token().to_owned(),
            leaves: self.leaf_count as u32,
            root: self.root.to_hex(),
        };
        serde_json::to_string(&wire).expect("pseudonym wire form serializes")
    }

    /// Parses and validates the wire form.
    pub fn from_json(data: &str) -> Result<Self, TreeError> {
        let wire: PseudonymWire = serde_json::from_str(data)
            .map_err(|e| TreeError::MalformedPseudonym(e.to_string()))?;
        if wire.v != 1 {
            return Err(TreeError::MalformedPseudonym(format!(
                "unsupported version {}",
                wire.v
            )));
        }
        let suite = HashSuite::from_token(&wire.suite).ok_or_else(|| {
            TreeError::MalformedPseudonym(format!("unknown suite {:?}", wire.suite))
        })?;
        let leaf_count = wire.leaves as usize;
        if leaf_count < 2 || !leaf_count.is_power_of_two() {
            return Err(TreeError::MalformedPseudonym(format!(
                "leaf count {leaf_count} is not a power of two >= 2"
            )));
        }
        let root = Digest::from_hex(&wire.root, suite.digest_len()).ok_or_else(|| {
            TreeError::MalformedPseudonym(format!(
                "root must be {} hex bytes",
                suite.digest_len()
            ))
        })?;
        Ok(Pseudonym {
            suite,
            leaf_count,
            root,
        })
    }
}
