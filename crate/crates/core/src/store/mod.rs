//! Durable record storage.
//!
//! Every module keeps its durable state behind [`StorePort`]: namespaced
//! string keys mapping to JSON documents, written in atomic batches. Keys are
//! compared bytewise, so callers that need ordered range scans (positions by
//! device and time) encode their sort key with fixed-width fields.

mod journal;
mod memory;
mod snapshot;

use std::fmt;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use journal::{Durability, JournalOptions, JournalStore};
pub use memory::MemoryStore;
pub use snapshot::{snapshot_export, snapshot_import};

/// On-disk format version for both the store directory and snapshot archives.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store at {path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("store format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("cannot decode record {namespace}/{key}: {reason}")]
    Decode {
        namespace: Namespace,
        key: String,
        reason: String,
    },
    #[error("cannot encode record: {0}")]
    Encode(String),
    #[error("target {0} is not empty")]
    NotEmpty(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    Devices,
    Groups,
    Schedules,
    Jobs,
    Positions,
    Messages,
    Events,
    Meta,
}

impl Namespace {
    pub const ALL: [Namespace; 8] = [
        Namespace::Devices,
        Namespace::Groups,
        Namespace::Schedules,
        Namespace::Jobs,
        Namespace::Positions,
        Namespace::Messages,
        Namespace::Events,
        Namespace::Meta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Devices => "devices",
            Namespace::Groups => "groups",
            Namespace::Schedules => "schedules",
            Namespace::Jobs => "jobs",
            Namespace::Positions => "positions",
            Namespace::Messages => "messages",
            Namespace::Events => "events",
            Namespace::Meta => "meta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|ns| ns.as_str() == s)
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WriteOp {
    Put {
        ns: Namespace,
        key: String,
        value: String,
    },
    Delete {
        ns: Namespace,
        key: String,
    },
}

/// A set of writes applied atomically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteBatch {
    ops: Vec<WriteOp>,
}

impl WriteBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put<T: Serialize + ?Sized>(
        &mut self,
        ns: Namespace,
        key: impl Into<String>,
        value: &T,
    ) -> Result<&mut Self, StoreError> {
        let value = serde_json::to_string(value).map_err(|e| StoreError::Encode(e.to_string()))?;
        self.ops.push(WriteOp::Put {
            ns,
            key: key.into(),
            value,
        });
        Ok(self)
    }

    pub fn delete(&mut self, ns: Namespace, key: impl Into<String>) -> &mut Self {
        self.ops.push(WriteOp::Delete { ns, key: key.into() });
        self
    }

    /// Append all of `other`'s writes after this batch's.
    pub fn extend(&mut self, other: WriteBatch) -> &mut Self {
        self.ops.extend(other.ops);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[WriteOp] {
        &self.ops
    }

    pub fn into_ops(self) -> Vec<WriteOp> {
        self.ops
    }
}

/// Transactional key-value storage shared by every module.
///
/// Implementations must make each committed batch visible atomically and, for
/// durable backends, survive a process restart once `commit` returns.
pub trait StorePort: Send + Sync {
    fn commit(&self, batch: WriteBatch) -> Result<(), StoreError>;

    fn get(&self, ns: Namespace, key: &str) -> Result<Option<String>, StoreError>;

    /// All records of a namespace in key order.
    fn scan(&self, ns: Namespace) -> Result<Vec<(String, String)>, StoreError>;

    /// Records with `start <= key < end`, in key order.
    fn scan_range(
        &self,
        ns: Namespace,
        start: &str,
        end: &str,
    ) -> Result<Vec<(String, String)>, StoreError>;

    /// Records with keys strictly after `after`, at most `limit` of them.
    fn scan_after(
        &self,
        ns: Namespace,
        after: &str,
        limit: usize,
    ) -> Result<Vec<(String, String)>, StoreError>;
}

/// Typed helpers over [`StorePort`].
pub trait StoreExt: StorePort {
    fn get_json<T: DeserializeOwned>(&self, ns: Namespace, key: &str) -> Result<Option<T>, StoreError> {
        self.get(ns, key)?
            .map(|raw| decode(ns, key, &raw))
            .transpose()
    }

    fn scan_json<T: DeserializeOwned>(&self, ns: Namespace) -> Result<Vec<T>, StoreError> {
        self.scan(ns)?
            .iter()
            .map(|(k, v)| decode(ns, k, v))
            .collect()
    }

    fn put_json<T: Serialize + ?Sized>(&self, ns: Namespace, key: &str, value: &T) -> Result<(), StoreError> {
        let mut batch = WriteBatch::new();
        batch.put(ns, key, value)?;
        self.commit(batch)
    }
}

impl<S: StorePort + ?Sized> StoreExt for S {}

pub(crate) fn decode<T: DeserializeOwned>(ns: Namespace, key: &str, raw: &str) -> Result<T, StoreError> {
    serde_json::from_str(raw).map_err(|e| StoreError::Decode {
        namespace: ns,
        key: key.to_owned(),
        reason: e.to_string(),
    })
}

/// Fixed-width decimal so lexical order matches numeric order.
pub fn ordered_u64(n: u64) -> String {
    format!("{n:020}")
}

/// Fixed-width encoding of a signed value, order-preserving.
pub fn ordered_i64(n: i64) -> String {
    format!("{:020}", (n as u64) ^ (1 << 63))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_keys_sort_numerically() {
        let mut v = [-5i64, 3, -1_000_000_000_000, 0, i64::MAX, i64::MIN, 42];
        let mut keys: Vec<String> = v.iter().map(|n| ordered_i64(*n)).collect();
        keys.sort();
        v.sort();
        assert_eq!(keys, v.iter().map(|n| ordered_i64(*n)).collect::<Vec<_>>());
        assert!(ordered_u64(9) < ordered_u64(10));
    }

    #[test]
    fn namespace_names_round_trip() {
        for ns in Namespace::ALL {
            assert_eq!(Namespace::parse(ns.as_str()), Some(ns));
        }
    }
}
