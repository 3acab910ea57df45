//! Persistent store for the per-pseudonym secret MAC keys.
//!
//! A store is a single JSON file mapping labels to key records. With a
//! passphrase the records are encrypted at rest (PBKDF2-HMAC-SHA256 key
//! derivation, ChaCha20-Poly1305 sealing; parameters recorded in the file
//! header). Plaintext mode exists for tests and throwaway setups.
//!
//! Losing a key makes its pseudonyms unprovable: nobody, including the
//! owner, can rebuild the tree without it. There is no recovery path.
//!
//! Mutations rewrite the file atomically (temp file + rename) under an
//! advisory file lock. Single-writer; concurrent readers are fine between
//! mutations.

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Nonce};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};

use crate::suite::{Digest, HashSuite, MacKey};

const PBKDF2_ITERATIONS: u32 = 600_000;
const SALT_LEN: usize = 16;
const NONCE_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum KeystoreError {
    #[error("a key labeled {0:?} already exists")]
    DuplicateLabel(String),
    #[error("no key labeled {0:?}")]
    UnknownLabel(String),
    #[error("keystore failure: {0}")]
    Storage(String),
}

impl From<std::io::Error> for KeystoreError {
    fn from(e: std::io::Error) -> Self {
        KeystoreError::Storage(e.to_string())
    }
}

/// How the store is protected on disk.
#[derive(Clone)]
pub enum Protection {
    /// Records stored as readable JSON. For tests and throwaway setups.
    Plaintext,
    /// Records sealed under a passphrase-derived key.
    Passphrase(String),
}

/// One labeled secret key plus bookkeeping.
#[derive(Clone, Debug)]
pub struct KeyRecord {
    pub label: String,
    pub suite: HashSuite,
    pub key: MacKey,
    pub created_at: DateTime<Utc>,
    /// Hashes of the encoded identifiers last used with this key, so a
    /// caller can warn when a re-derivation uses a different identifier set.
    pub identifier_fingerprints: Vec<Digest>,
}

/// Listing entry; never exposes key bytes.
#[derive(Clone, Debug, Serialize)]
pub struct KeyListEntry {
    pub label: String,
    pub suite: String,
    pub created_at: DateTime<Utc>,
}

pub struct KeyStore {
    path: PathBuf,
    protection: Protection,
    records: BTreeMap<String, KeyRecord>,
}

impl KeyStore {
    /// Opens the store at `path`, creating an empty one in memory if the
    /// file does not exist yet (it is written on first mutation).
    pub fn open(path: impl Into<PathBuf>, protection: Protection) -> Result<Self, KeystoreError> {
        let path = path.into();
        let records = if path.exists() {
            let _lock = FileLock::shared(&path)?;
            let data = fs::read_to_string(&path)?;
            parse_store(&data, &protection)?
        } else {
            BTreeMap::new()
        };
        Ok(KeyStore {
            path,
            protection,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Creates and persists a fresh random key under `label`.
    pub fn create_key(
        &mut self,
        label: &str,
        suite: HashSuite,
    ) -> Result<&KeyRecord, KeystoreError> {
        if self.records.contains_key(label) {
            return Err(KeystoreError::DuplicateLabel(label.to_owned()));
        }
        let key = suite
            .random_key()
            .map_err(|e| KeystoreError::Storage(e.to_string()))?;
        let record = KeyRecord {
            label: label.to_owned(),
            suite,
            key,
            created_at: Utc::now(),
            identifier_fingerprints: Vec::new(),
        };
        self.records.insert(label.to_owned(), record);
        self.save()?;
        Ok(&self.records[label])
    }

    pub fn get_key(&self, label: &str) -> Result<&KeyRecord, KeystoreError> {
        self.records
            .get(label)
            .ok_or_else(|| KeystoreError::UnknownLabel(label.to_owned()))
    }

    pub fn delete_key(&mut self, label: &str) -> Result<(), KeystoreError> {
        if self.records.remove(label).is_none() {
            return Err(KeystoreError::UnknownLabel(label.to_owned()));
        }
        self.save()
    }

    pub fn list_keys(&self) -> Vec<KeyListEntry> {
        self.records
            .values()
            .map(|r| KeyListEntry {
                label: r.label.clone(),
                suite: r.suite.token().to_owned(),
                created_at: r.created_at,
            })
            .collect()
    }

    /// Records the identifier fingerprints last used with `label`.
    pub fn set_fingerprints(
        &mut self,
        label: &str,
        fingerprints: Vec<Digest>,
    ) -> Result<(), KeystoreError> {
        let record = self
            .records
            .get_mut(label)
            .ok_or_else(|| KeystoreError::UnknownLabel(label.to_owned()))?;
        record.identifier_fingerprints = fingerprints;
        self.save()
    }

    fn save(&self) -> Result<(), KeystoreError> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let body = serialize_store(&self.records, &self.protection)?;
        let _lock = FileLock::exclusive(&self.path)?;
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// On-disk format

#[derive(Serialize, Deserialize)]
struct RecordWire {
    suite: String,
    key: String,
    created_at: DateTime<Utc>,
    #[serde(default)]
    fingerprints: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainFile {
    v: u8,
    kdf: String,
    records: BTreeMap<String, RecordWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SealedFile {
    v: u8,
    kdf: String,
    iterations: u32,
    salt: String,
    nonce: String,
    ciphertext: String,
}

fn serialize_store(
    records: &BTreeMap<String, KeyRecord>,
    protection: &Protection,
) -> Result<String, KeystoreError> {
    let wire: BTreeMap<String, RecordWire> = records
        .iter()
        .map(|(label, r)| {
            (
                label.clone(),
                RecordWire {
                    suite: r.suite.token().to_owned(),
                    key: hex::encode(r.key.as_bytes()),
                    created_at: r.created_at,
                    fingerprints: r
                        .identifier_fingerprints
                        .iter()
                        .map(|d| d.to_hex())
                        .collect(),
                },
            )
        })
        .collect();

    match protection {
        Protection::Plaintext => {
            let file = PlainFile {
                v: 1,
                kdf: "none".to_owned(),
                records: wire,
            };
            Ok(serde_json::to_string_pretty(&file)
                .map_err(|e| KeystoreError::Storage(e.to_string()))?)
        }
        Protection::Passphrase(pass) => {
            let plaintext =
                serde_json::to_string(&wire).map_err(|e| KeystoreError::Storage(e.to_string()))?;
            let mut salt = [0u8; SALT_LEN];
            let mut nonce = [0u8; NONCE_LEN];
            getrandom::getrandom(&mut salt)
                .and_then(|_| getrandom::getrandom(&mut nonce))
                .map_err(|e| KeystoreError::Storage(e.to_string()))?;
            let sealing_key = derive_key(pass, &salt, PBKDF2_ITERATIONS);
            let cipher = ChaCha20Poly1305::new((&sealing_key).into());
            let ciphertext = cipher
                .encrypt(Nonce::from_slice(&nonce), plaintext.as_bytes())
                .map_err(|_| KeystoreError::Storage("encryption failed".into()))?;
            let file = SealedFile {
                v: 1,
                kdf: "pbkdf2-hmac-sha256".to_owned(),
                iterations: PBKDF2_ITERATIONS,
                salt: hex::encode(salt),
                nonce: hex::encode(nonce),
                ciphertext: hex::encode(ciphertext),
            };
            Ok(serde_json::to_string_pretty(&file)
                .map_err(|e| KeystoreError::Storage(e.to_string()))?)
        }
    }
}

fn parse_store(
    data: &str,
    protection: &Protection,
) -> Result<BTreeMap<String, KeyRecord>, KeystoreError> {
    let header: serde_json::Value =
        serde_json::from_str(data).map_err(|e| KeystoreError::Storage(e.to_string()))?;
    let kdf = header
        .get("kdf")
        .and_then(|v| v.as_str())
        .ok_or_else(|| KeystoreError::Storage("missing kdf field".into()))?;

    let wire: BTreeMap<String, RecordWire> = match (kdf, protection) {
        ("none", _) => {
            let file: PlainFile = serde_json::from_str(data)
                .map_err(|e| KeystoreError::Storage(e.to_string()))?;
            file.records
        }
        ("pbkdf2-hmac-sha256", Protection::Passphrase(pass)) => {
            let file: SealedFile = serde_json::from_str(data)
                .map_err(|e| KeystoreError::Storage(e.to_string()))?;
            let salt = hex::decode(&file.salt)
                .map_err(|_| KeystoreError::Storage("bad salt hex".into()))?;
            let nonce = hex::decode(&file.nonce)
                .map_err(|_| KeystoreError::Storage("bad nonce hex".into()))?;
            if nonce.len() != NONCE_LEN {
                return Err(KeystoreError::Storage("bad nonce length".into()));
            }
            let ciphertext = hex::decode(&file.ciphertext)
                .map_err(|_| KeystoreError::Storage("bad ciphertext hex".into()))?;
            let sealing_key = derive_key(pass, &salt, file.iterations);
            let cipher = ChaCha20Poly1305::new((&sealing_key).into());
            let plaintext = cipher
                .decrypt(Nonce::from_slice(&nonce), ciphertext.as_slice())
                .map_err(|_| {
                    KeystoreError::Storage("decryption failed (wrong passphrase or corrupt file)".into())
                })?;
            serde_json::from_slice(&plaintext)
                .map_err(|e| KeystoreError::Storage(e.to_string()))?
        }
        ("pbkdf2-hmac-sha256", Protection::Plaintext) => {
            return Err(KeystoreError::Storage(
                "store is encrypted; a passphrase is required".into(),
            ));
        }
        (other, _) => {
            return Err(KeystoreError::Storage(format!("unknown kdf {other:?}")));
        }
    };

    let mut records = BTreeMap::new();
    for (label, r) in wire {
        let suite = HashSuite::from_token(&r.suite)
            .ok_or_else(|| KeystoreError::Storage(format!("unknown suite {:?}", r.suite)))?;
        let key_bytes = hex::decode(&r.key)
            .map_err(|_| KeystoreError::Storage(format!("bad key hex for {label:?}")))?;
        if key_bytes.len() != suite.key_len() {
            return Err(KeystoreError::Storage(format!(
                "key for {label:?} has wrong length"
            )));
        }
        let mut fingerprints = Vec::with_capacity(r.fingerprints.len());
        for f in &r.fingerprints {
            fingerprints.push(Digest::from_hex(f, suite.digest_len()).ok_or_else(|| {
                KeystoreError::Storage(format!("bad fingerprint hex for {label:?}"))
            })?);
        }
        records.insert(
            label.clone(),
            KeyRecord {
                label,
                suite,
                key: MacKey::new(key_bytes),
                created_at: r.created_at,
                identifier_fingerprints: fingerprints,
            },
        );
    }
    Ok(records)
}

fn derive_key(passphrase: &str, salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), salt, iterations, &mut out);
    out
}

/// Advisory flock on a sidecar lock file (the store file itself is replaced
/// by rename, so locking it directly would be racy).
struct FileLock {
    file: fs::File,
}

impl FileLock {
    fn exclusive(store_path: &Path) -> Result<Self, KeystoreError> {
        Self::acquire(store_path, libc::LOCK_EX)
    }

    fn shared(store_path: &Path) -> Result<Self, KeystoreError> {
        Self::acquire(store_path, libc::LOCK_SH)
    }

    fn acquire(store_path: &Path, op: libc::c_int) -> Result<Self, KeystoreError> {
        let lock_path = store_path.with_extension("lock");
        let file = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)?;
        let rc = unsafe { libc::flock(file.as_raw_fd(), op) };
        if rc != 0 {
            return Err(KeystoreError::Storage(format!(
                "flock failed: {}",
                std::io::Error::last_os_error()
            )));
        }
        Ok(FileLock { file })
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        unsafe {
            libc::flock(self.file.as_raw_fd(), libc::LOCK_UN);
        }
    }
}
