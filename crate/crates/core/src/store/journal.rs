//! Single-directory store: write-ahead journal plus periodic compaction.
//!
//! Layout:
//!
//! ```text
//! <dir>/MANIFEST        "smstrack-store <version>"
//! <dir>/snapshot.jsonl  compacted state, one WriteOp::Put per line
//! <dir>/journal.log     one committed batch per line: "<crc32 hex> <json ops>"
//! ```
//!
//! A batch is committed once its journal line is written (and synced, under
//! [`Durability::Fsync`]). On open the snapshot is loaded and the journal
//! replayed. A torn final line is an interrupted commit and is truncated; a
//! bad line anywhere else is corruption and refuses to open.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use log::warn;

use super::memory::{apply, range, Tables};
use super::{Namespace, StoreError, StorePort, WriteBatch, WriteOp, FORMAT_VERSION};

const MANIFEST: &str = "MANIFEST";
const SNAPSHOT: &str = "snapshot.jsonl";
const JOURNAL: &str = "journal.log";
const MANIFEST_TAG: &str = "smstrack-store";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Durability {
    /// fsync the journal on every commit.
    #[default]
    Fsync,
    /// Hand writes to the OS on every commit without forcing them to disk.
    /// Survives process crashes, not power loss.
    Flush,
}

#[derive(Debug, Clone, Copy)]
pub struct JournalOptions {
    pub durability: Durability,
    /// Compact after this many journal lines. `0` disables automatic compaction.
    pub compact_after: usize,
}

impl Default for JournalOptions {
    fn default() -> Self {
        Self {
            durability: Durability::Fsync,
            compact_after: 50_000,
        }
    }
}

struct Journal {
    writer: BufWriter<File>,
    lines: usize,
}

pub struct JournalStore {
    dir: PathBuf,
    options: JournalOptions,
    tables: RwLock<Tables>,
    journal: Mutex<Journal>,
}

impl std::fmt::Debug for JournalStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JournalStore").field("dir", &self.dir).finish()
    }
}

fn encode_line(ops: &[WriteOp]) -> String {
    let body = serde_json::to_string(ops).expect("write ops serialize");
    format!("{:08x} {body}\n", crc32fast::hash(body.as_bytes()))
}

fn decode_line(line: &str) -> Option<Vec<WriteOp>> {
    let (crc, body) = line.split_once(' ')?;
    let crc = u32::from_str_radix(crc, 16).ok()?;
    if crc32fast::hash(body.as_bytes()) != crc {
        return None;
    }
    serde_json::from_str(body).ok()
}

fn sync_dir(dir: &Path) {
    // not supported everywhere; best effort
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

pub(crate) fn write_manifest(dir: &Path) -> Result<(), StoreError> {
    fs::write(dir.join(MANIFEST), format!("{MANIFEST_TAG} {FORMAT_VERSION}\n"))?;
    Ok(())
}

pub(crate) fn check_manifest(path: &Path) -> Result<(), StoreError> {
    check_manifest_text(&fs::read_to_string(path)?, path)
}

pub(crate) fn check_manifest_text(text: &str, path: &Path) -> Result<(), StoreError> {
    let found = text.trim();
    match found.split_once(' ') {
        Some((MANIFEST_TAG, v)) if v == FORMAT_VERSION.to_string() => Ok(()),
        Some((MANIFEST_TAG, v)) => Err(StoreError::VersionMismatch {
            found: v.to_owned(),
            expected: FORMAT_VERSION,
        }),
        _ => Err(StoreError::Corrupt {
            path: path.to_owned(),
            line: 1,
            reason: format!("unrecognized manifest {found:?}"),
        }),
    }
}

impl JournalStore {
    /// Create the store in `dir` or recover an existing one.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, JournalOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: JournalOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_owned();
        fs::create_dir_all(&dir)?;
        let manifest = dir.join(MANIFEST);
        if manifest.exists() {
            check_manifest(&manifest)?;
        } else {
            write_manifest(&dir)?;
            sync_dir(&dir);
        }

        let mut tables = Tables::new();
        let snapshot = dir.join(SNAPSHOT);
        if snapshot.exists() {
            load_snapshot(&snapshot, &mut tables)?;
        }
        let journal_path = dir.join(JOURNAL);
        let lines = replay_journal(&journal_path, &mut tables)?;

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)?;

        Ok(Self {
            dir,
            options,
            tables: RwLock::new(tables),
            journal: Mutex::new(Journal {
                writer: BufWriter::new(file),
                lines,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Fold the journal into a fresh snapshot and start an empty journal.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut journal = self.journal.lock().expect("journal lock poisoned");
        self.compact_locked(&mut journal)
    }

    fn compact_locked(&self, journal: &mut Journal) -> Result<(), StoreError> {
        journal.writer.flush()?;
        let tables = self.tables.read().expect("store lock poisoned");

        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for (ns, table) in tables.iter() {
                for (key, value) in table {
                    let op = WriteOp::Put {
                        ns: *ns,
                        key: key.clone(),
                        value: value.clone(),
                    };
                    serde_json::to_writer(&mut out, &op).map_err(|e| StoreError::Encode(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        sync_dir(&self.dir);

        // replaying the old journal over the new snapshot is harmless, so a
        // crash between the rename above and this truncation loses nothing
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(self.dir.join(JOURNAL))?;
        file.sync_all()?;
        let file = OpenOptions::new().append(true).open(self.dir.join(JOURNAL))?;
        journal.writer = BufWriter::new(file);
        journal.lines = 0;
        Ok(())
    }
}

fn load_snapshot(path: &Path, tables: &mut Tables) -> Result<(), StoreError> {
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let op: WriteOp = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        apply(tables, [op]);
    }
    Ok(())
}

fn replay_journal(path: &Path, tables: &mut Tables) -> Result<usize, StoreError> {
    if !path.exists() {
        return Ok(0);
    }
    let bytes = fs::read(path)?;
    let mut offset = 0usize;
    let mut good_end = 0usize;
    let mut count = 0usize;
    let mut line_no = 0usize;

    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (line, next, terminated) = match rest.iter().position(|b| *b == b'\n') {
            Some(n) => (&rest[..n], offset + n + 1, true),
            None => (rest, bytes.len(), false),
        };
        let decoded = std::str::from_utf8(line).ok().and_then(decode_line);
        match decoded {
            Some(ops) if terminated => {
                apply(tables, ops);
                count += 1;
                good_end = next;
            }
            _ if next == bytes.len() => {
                warn!(
                    "discarding interrupted commit at {}:{} ({} bytes)",
                    path.display(),
                    line_no,
                    bytes.len() - offset
                );
                break;
            }
            _ => {
                return Err(StoreError::Corrupt {
                    path: path.to_owned(),
                    line: line_no,
                    reason: "journal record fails checksum".into(),
                });
            }
        }
        offset = next;
    }

    if good_end < bytes.len() {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(good_end as u64)?;
        file.sync_all()?;
    }
    Ok(count)
}

impl StorePort for JournalStore {
    fn commit(&self, batch: WriteBatch) -> Result<(), StoreError> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut journal = self.journal.lock().expect("journal lock poisoned");
        let line = encode_line(batch.ops());
        journal.writer.write_all(line.as_bytes())?;
        journal.writer.flush()?;
        if self.options.durability == Durability::Fsync {
            journal.writer.get_ref().sync_data()?;
        }
        journal.lines += 1;
        {
            let mut tables = self.tables.write().expect("store lock poisoned");
            apply(&mut tables, batch.into_ops());
        }
        if self.options.compact_after > 0 && journal.lines >= self.options.compact_after {
            self.compact_locked(&mut journal)?;
        }
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
