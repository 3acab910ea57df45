//! Canonical encoding of composite identifiers.
//!
//! An identifier is a domain label plus an ordered list of attribute byte
//! strings (e.g. first name, last name, ID card number). The encoding is
//! length-prefixed throughout so that it is injective: naive concatenation
//! would make `("AB","C")` and `("A","BC")` collide, and everything hashed
//! into a tree must be collision-free at the encoding layer already.
//!
//! Attribute bytes are hashed verbatim; callers that want case- or
//! whitespace-insensitive identifiers must normalize before constructing
//! the [`Identifier`].

use serde::de::{Deserialize, Deserializer};

pub const MAX_ATTRIBUTES: usize = 255;
pub const MAX_ATTRIBUTE_LEN: usize = 65_535;
pub const MAX_DOMAIN_LABEL_LEN: usize = 65_535;

const ENCODING_VERSION: u8 = 0x01;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum IdentifierError {
    #[error("identifier needs at least one attribute")]
    NoAttributes,
    #[error("attribute {index} is empty")]
    EmptyAttribute { index: usize },
    #[error("too many attributes: {count} (max {MAX_ATTRIBUTES})")]
    TooManyAttributes { count: usize },
    #[error("attribute {index} is {len} bytes (max {MAX_ATTRIBUTE_LEN})")]
    AttributeTooLong { index: usize, len: usize },
    #[error("domain label is {len} bytes (max {MAX_DOMAIN_LABEL_LEN})")]
    DomainLabelTooLong { len: usize },
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),
}

/// A composite identifier within one organisation's context.
///
/// Equality is exact: same domain label and same ordered attribute list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Identifier {
    domain_label: String,
    attributes: Vec<Vec<u8>>,
}

impl Identifier {
    /// Builds a validated identifier from raw attribute byte strings.
    pub fn new(
        domain_label: impl Into<String>,
        attributes: Vec<Vec<u8>>,
    ) -> Result<Self, IdentifierError> {
        let domain_label = domain_label.into();
        if domain_label.len() > MAX_DOMAIN_LABEL_LEN {
            return Err(IdentifierError::DomainLabelTooLong {
                len: domain_label.len(),
            });
        }
        if attributes.is_empty() {
            return Err(IdentifierError::NoAttributes);
        }
        if attributes.len() > MAX_ATTRIBUTES {
            return Err(IdentifierError::TooManyAttributes {
                count: attributes.len(),
            });
        }
        for (index, attr) in attributes.iter().enumerate() {
            if attr.is_empty() {
                return Err(IdentifierError::EmptyAttribute { index });
            }
            if attr.len() > MAX_ATTRIBUTE_LEN {
                return Err(IdentifierError::AttributeTooLong {
                    index,
                    len: attr.len(),
                });
            }
        }
        Ok(Identifier {
            domain_label,
            attributes,
        })
    }

    /// Convenience constructor for UTF-8 attributes.
    pub fn from_strings(
        domain_label: impl Into<String>,
        attributes: &[&str],
    ) -> Result<Self, IdentifierError> {
        Identifier::new(
            domain_label,
            attributes.iter().map(|a| a.as_bytes().to_vec()).collect(),
        )
    }

    pub fn domain_label(&self) -> &str {
        &self.domain_label
    }

    pub fn attributes(&self) -> &[Vec<u8>] {
        &self.attributes
    }

    /// Canonical injective encoding.
    ///
    /// Layout: version byte `0x01`, 2-byte big-endian domain label length,
    /// label bytes, 1-byte attribute count, then per attribute a 2-byte
    /// big-endian length followed by the bytes.
    pub fn encode(&self) -> Vec<u8> {
        let total = 1
            + 2
            + self.domain_label.len()
            + 1
            + self.attributes.iter().map(|a| 2 + a.len()).sum::<usize>();
        let mut out = Vec::with_capacity(total);
        out.push(ENCODING_VERSION);
        out.extend_from_slice(&(self.domain_label.len() as u16).to_be_bytes());
        out.extend_from_slice(self.domain_label.as_bytes());
        out.push(self.attributes.len() as u8);
        for attr in &self.attributes {
            out.extend_from_slice(&(attr.len() as u16).to_be_bytes());
            out.extend_from_slice(attr);
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). Rejects truncated input,
    /// trailing bytes, and anything violating the identifier invariants.
    pub fn decode(data: &[u8]) -> Result<Self, IdentifierError> {
        let mut cursor = Cursor { data, pos: 0 };
        let version = cursor.take_u8("version byte")?;
        if version != ENCODING_VERSION {
            return Err(IdentifierError::MalformedEncoding(format!(
                "unsupported version 0x{version:02x}"
            )));
        }
        let label_len = cursor.take_u16("domain label length")? as usize;
        let label_bytes = cursor.take_bytes(label_len, "domain label")?;
        let domain_label = std::str::from_utf8(label_bytes)
            .map_err(|_| {
                IdentifierError::MalformedEncoding("domain label is not UTF-8".into())
            })?
            .to_owned();
        let count = cursor.take_u8("attribute count")? as usize;
        let mut attributes = Vec::with_capacity(count);
        for i in 0..count {
            let len = cursor.take_u16(&format!("attribute {i} length"))? as usize;
            let bytes = cursor.take_bytes(len, &format!("attribute {i}"))?;
            attributes.push(bytes.to_vec());
        }
        if cursor.pos != data.len() {
            return Err(IdentifierError::MalformedEncoding(format!(
                "{} trailing bytes after attribute list",
                data.len() - cursor.pos
            )));
        }
        // Re-validate so decode only ever yields well-formed identifiers.
        Identifier::new(domain_label, attributes).map_err(|e| match e {
            IdentifierError::MalformedEncoding(_) => e,
            other => IdentifierError::MalformedEncoding(other.to_string()),
        })
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take_u8(&mut self, what: &str) -> Result<u8, IdentifierError> {
        let b = self.take_bytes(1, what)?;
        Ok(b[0])
    }

    fn take_u16(&mut self, what: &str) -> Result<u16, IdentifierError> {
        let b = self.take_bytes(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn take_bytes(&mut self, len: usize, what: &str) -> Result<&'a [u8], IdentifierError> {
        if self.data.len() - self.pos < len {
            return Err(IdentifierError::MalformedEncoding(format!(
                "truncated at byte {}: expected {len} more bytes for {what}",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

// JSON form used by scenario files and the CLI:
// {"domain": "...", "attributes": ["...", ...]} with UTF-8 attributes.
impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            domain: String,
            attributes: Vec<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Identifier::new(
            raw.domain,
            raw.attributes.into_iter().map(String::into_bytes).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}
