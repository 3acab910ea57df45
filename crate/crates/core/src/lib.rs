//! User-generated pseudonyms from keyed Merkle trees.
//!
//! A pseudonym is the root of a Merkle tree built over all of a user's
//! domain-specific identifiers, with each identifier contributing a hash
//! leaf and a keyed-hash (MAC) leaf under a per-context secret key. The
//! root hides the identifiers, different keys give unlinkable pseudonyms
//! over the same identifier set, and an authentication path proves — to an
//! organisation that already knows one identifier — that the pseudonym
//! belongs to that identifier without revealing any other.
//!
//! ```
//! use merkle_pseudonym::{prove, verify, HashSuite, Identifier, PseudonymTree, Verdict};
//!
//! let ids = vec![
//!     Identifier::from_strings("org.university.students", &["student-no-4711"]).unwrap(),
//!     Identifier::from_strings("org.finmin.vat", &["vat-el-99887766"]).unwrap(),
//! ];
//! let key = HashSuite::Classical256.random_key().unwrap();
//! let tree = PseudonymTree::build(HashSuite::Classical256, key, ids).unwrap();
//! let pseudonym = tree.root();
//!
//! // Prove to the university that the pseudonym covers the student number.
//! let proof = prove(&tree, 0).unwrap();
//! assert_eq!(verify(&pseudonym, &tree.identifiers()[0], &proof), Verdict::Accept);
//! ```

pub mod identifier;
pub mod keystore;
pub mod proof;
pub mod sim;
pub mod suite;
pub mod tree;

pub use identifier::{Identifier, IdentifierError};
pub use keystore::{KeyListEntry, KeyRecord, KeyStore, KeystoreError, Protection};
pub use proof::{prove, verify, MalformedProof, OwnershipProof, RejectReason, Verdict};
pub use suite::{CryptoError, Digest, HashSuite, MacKey, KEY_LEN, MAX_DIGEST_LEN};
pub use tree::{
    plan_leaves, Direction, LeafPlan, PathEntry, Pseudonym, PseudonymTree, TreeError,
};
