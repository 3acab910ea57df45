//! Test-only reference implementation of the tree construction.
//!
//! Straight-line recursion over the leaf list, written independently of the
//! library's level-by-level builder so the two can check each other. Keep
//! it independent: no `PseudonymTree` use in here.

use merkle_pseudonym::{HashSuite, Identifier, MacKey};
use rand_chacha::rand_core::RngCore;

pub type Digest = merkle_pseudonym::Digest;

/// Minimal-m leaf count by explicit search: 2N when N is a power of two,
/// otherwise 2^(m+1) for the smallest m with N < 2^m.
pub fn oracle_leaf_count(n: usize) -> usize {
    assert!(n >= 1);
    if n.is_power_of_two() {
        return 2 * n;
    }
    let mut m = 0usize;
    while (1usize << m) <= n {
        m += 1;
    }
    1 << (m + 1)
}

/// Leaf list per the construction rule: `(H(enc), H_k(enc))` per identifier,
/// then keyed pad leaves of the slot index.
pub fn oracle_leaves(suite: HashSuite, key: &MacKey, ids: &[Identifier]) -> Vec<Digest> {
    let leaf_count = oracle_leaf_count(ids.len());
    let mut leaves = Vec::with_capacity(leaf_count);
    for id in ids {
        let enc = id.encode();
        leaves.push(suite.hash(&enc));
        leaves.push(suite.mac(key, &enc).unwrap());
    }
    for slot in 2 * ids.len()..leaf_count {
        let mut preimage = b"\x00pad".to_vec();
        preimage.extend_from_slice(&(slot as u64).to_be_bytes());
        leaves.push(suite.mac(key, &preimage).unwrap());
    }
    leaves
}

pub fn oracle_root(suite: HashSuite, key: &MacKey, ids: &[Identifier]) -> Digest {
    fold(suite, &oracle_leaves(suite, key, ids))
}

fn fold(suite: HashSuite, leaves: &[Digest]) -> Digest {
    if leaves.len() == 1 {
        return leaves[0];
    }
    let (left, right) = leaves.split_at(leaves.len() / 2);
    let mut buf = fold(suite, left).as_bytes().to_vec();
    buf.extend_from_slice(fold(suite, right).as_bytes());
    suite.hash(&buf)
}

/// Random but structurally valid identifiers, pairwise distinct by the
/// embedded index.
pub fn random_identifiers(rng: &mut impl RngCore, n: usize) -> Vec<Identifier> {
    (0..n)
        .map(|i| {
            let attr_count = 1 + (rng.next_u32() as usize) % 3;
            let mut attrs: Vec<Vec<u8>> = (0..attr_count)
                .map(|_| {
                    let len = 1 + (rng.next_u32() as usize) % 24;
                    let mut bytes = vec![0u8; len];
                    rng.fill_bytes(&mut bytes);
                    bytes
                })
                .collect();
            attrs.push(format!("uniq-{i}").into_bytes());
            Identifier::new(format!("org.rand.{}", rng.next_u32() % 8), attrs).unwrap()
        })
        .collect()
}

pub fn random_key(rng: &mut impl RngCore) -> MacKey {
    let mut bytes = vec![0u8; merkle_pseudonym::KEY_LEN];
    rng.fill_bytes(&mut bytes);
    MacKey::new(bytes)
}
