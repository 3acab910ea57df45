//! Hash suite abstraction: a collision-resistant hash `H` and a keyed hash
//! `H_k` (HMAC) behind a suite identifier, so the tree code never hardcodes
//! digest parameters.
//!
//! Two suites are defined: `mp-sha256` (SHA-256, 32-byte digests) for
//! classical security and `mp-sha384` (SHA-384, 48-byte digests) for
//! post-quantum collision-resistance margins. Both use 32-byte MAC keys.

use hmac::{Hmac, Mac};
use sha2::{Digest as Sha2Digest, Sha256, Sha384};
use subtle::ConstantTimeEq;
use zeroize::Zeroize;

/// Largest digest length across suites, in bytes.
pub const MAX_DIGEST_LEN: usize = 48;

/// MAC key length in bytes, shared by both suites.
pub const KEY_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CryptoError {
    #[error("MAC key must be {expected} bytes, got {actual}")]
    KeyLength { expected: usize, actual: usize },
    #[error("OS randomness source unavailable: {0}")]
    EntropyUnavailable(String),
}

/// Identifies the hash/MAC parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HashSuite {
    /// SHA-256 / HMAC-SHA-256, 32-byte digests.
    Classical256,
    /// SHA-384 / HMAC-SHA-384, 48-byte digests.
    Pq384,
}

impl HashSuite {
    /// Digest length in bytes: 32 for `Classical256`, 48 for `Pq384`.
    pub const fn digest_len(self) -> usize {
        match self {
            HashSuite::Classical256 => 32,
            HashSuite::Pq384 => 48,
        }
    }

    /// MAC key length in bytes (32 for both suites).
    pub const fn key_len(self) -> usize {
        KEY_LEN
    }

    /// Wire token carried in serialized pseudonyms and proofs.
    pub const fn token(self) -> &'static str {
        match self {
            HashSuite::Classical256 => "mp-sha256",
            HashSuite::Pq384 => "mp-sha384",
        }
    }

    /// Parses a wire token. Returns `None` for unknown tokens.
    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "mp-sha256" => Some(HashSuite::Classical256),
            "mp-sha384" => Some(HashSuite::Pq384),
            _ => None,
        }
    }

    /// The suite's plain hash `H`.
    pub fn hash(self, data: &[u8]) -> Digest {
        match self {
            HashSuite::Classical256 => Digest::from_slice(&Sha256::digest(data)),
            HashSuite::Pq384 => Digest::from_slice(&Sha384::digest(data)),
        }
    }

    /// The suite's keyed hash `H_k` (HMAC with the suite's hash).
    ///
    /// The key must be exactly [`KEY_LEN`] bytes; `random_key` always
    /// produces a usable key.
    pub fn mac(self, key: &MacKey, data: &[u8]) -> Result<Digest, CryptoError> {
        if key.as_bytes().len() != KEY_LEN {
            return Err(CryptoError::KeyLength {
                expected: KEY_LEN,
                actual: key.as_bytes().len(),
            });
        }
        Ok(hmac_digest(self, key.as_bytes(), data))
    }

    /// Draws a fresh uniformly random MAC key from the OS entropy source.
    pub fn random_key(self) -> Result<MacKey, CryptoError> {
        let mut bytes = vec![0u8; KEY_LEN];
        getrandom::getrandom(&mut bytes)
            .map_err(|e| CryptoError::EntropyUnavailable(e.to_string()))?;
        Ok(MacKey::new(bytes))
    }
}

impl std::fmt::Display for HashSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// HMAC with any key length. The public `mac` operation pins the key length;
/// this is the raw primitive (and what the standard test vectors target).
fn hmac_digest(suite: HashSuite, key: &[u8], data: &[u8]) -> Digest {
    match suite {
        HashSuite::Classical256 => {
            let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key)
                .expect("HMAC accepts any key length");
            m.update(data);
            Digest::from_slice(&m.finalize().into_bytes())
        }
        HashSuite::Pq384 => {
            let mut m = <Hmac<Sha384> as Mac>::new_from_slice(key)
                .expect("HMAC accepts any key length");
            m.update(data);
            Digest::from_slice(&m.finalize().into_bytes())
        }
    }
}

/// A fixed-length hash output. Length is the owning suite's `digest_len`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest {
    len: u8,
    bytes: [u8; MAX_DIGEST_LEN],
}

impl Digest {
    /// Wraps raw digest bytes. Panics if longer than [`MAX_DIGEST_LEN`];
    /// only suite outputs and length-checked parsers construct digests.
    pub fn from_slice(bytes: &[u8]) -> Self {
        assert!(bytes.len() <= MAX_DIGEST_LEN, "digest too long");
        let mut buf = [0u8; MAX_DIGEST_LEN];
        buf[..bytes.len()].copy_from_slice(bytes);
        Digest {
            len: bytes.len() as u8,
            bytes: buf,
        }
    }

    /// Parses a hex string into a digest of exactly `expected_len` bytes.
    pub fn from_hex(hex_str: &str, expected_len: usize) -> Option<Self> {
        let bytes = hex::decode(hex_str).ok()?;
        if bytes.len() != expected_len || expected_len > MAX_DIGEST_LEN {
            return None;
        }
        Some(Digest::from_slice(&bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    /// Constant-time equality on both content and length.
    pub fn ct_eq(&self, other: &Digest) -> bool {
        // Unused tails are always zeroed, so comparing the full buffers
        // plus the length byte is equivalent to comparing the prefixes.
        let bytes_eq = self.bytes.ct_eq(&other.bytes);
        let len_eq = self.len.ct_eq(&other.len);
        bool::from(bytes_eq & len_eq)
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A secret MAC key. Zeroed on drop, redacted in debug output, and never
/// serialized into pseudonyms or proofs.
#[derive(Clone)]
pub struct MacKey(Vec<u8>);

impl MacKey {
    pub fn new(bytes: Vec<u8>) -> Self {
        MacKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl PartialEq for MacKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for MacKey {}

impl Drop for MacKey {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

impl std::fmt::Debug for MacKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MacKey([{} bytes redacted])", self.0.len())
    }
}
