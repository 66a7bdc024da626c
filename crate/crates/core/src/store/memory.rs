use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::RwLock;

use super::{Namespace, StoreError, StorePort, WriteBatch, WriteOp};

pub(crate) type Tables = BTreeMap<Namespace, BTreeMap<String, String>>;

pub(crate) fn apply(tables: &mut Tables, ops: impl IntoIterator<Item = WriteOp>) {
    for op in ops {
        match op {
            WriteOp::Put { ns, key, value } => {
                tables.entry(ns).or_default().insert(key, value);
            }
            WriteOp::Delete { ns, key } => {
                if let Some(t) = tables.get_mut(&ns) {
                    t.remove(&key);
                }
            }
        }
    }
}

pub(crate) fn range(
    tables: &Tables,
    ns: Namespace,
    lower: Bound<&str>,
    upper: Bound<&str>,
    limit: usize,
) -> Vec<(String, String)> {
    let Some(table) = tables.get(&ns) else {
        return Vec::new();
    };
    if let (Bound::Included(a) | Bound::Excluded(a), Bound::Excluded(b)) = (lower, upper) {
        if a >= b {
            return Vec::new();
        }
    }
    table
        .range::<str, _>((lower, upper))
        .take(limit)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Volatile store for simulations and tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: RwLock<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StorePort for MemoryStore {
    fn commit(&self, batch: WriteBatch) -> Result<(), StoreError> {
        let mut tables = self.tables.write().expect("store lock poisoned");
        apply(&mut tables, batch.into_ops());
        Ok(())
    }

    fn get(&self, ns: Namespace, key: &str) -> Result<Option<String>, StoreError> {
        let tables = self.tables.read().expect("store lock poisoned");
        Ok(tables.get(&ns).and_then(|t| t.get(key)).cloned())
    }

    fn scan(&self, ns: Namespace) -> Result<Vec<(String, String)>, StoreError> {
        let tables = self.tables.read().expect("store lock poisoned");
        Ok(range(&tables, ns, Bound::Unbounded, Bound::Unbounded, usize::MAX))
    }

    fn scan_range(&self, ns: Namespace, start: &str, end: &str) -> Result<Vec<(String, String)>, StoreError> {
        let tables = self.tables.read().expect("store lock poisoned");
        Ok(range(&tables, ns, Bound::Included(start), Bound::Excluded(end), usize::MAX))
    }

    fn scan_after(&self, ns: Namespace, after: &str, limit: usize) -> Result<Vec<(String, String)>, StoreError> {
        let tables = self.tables.read().expect("store lock poisoned");
        Ok(range(&tables, ns, Bound::Excluded(after), Bound::Unbounded, limit))
    }
}
