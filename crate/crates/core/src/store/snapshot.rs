//! Portable snapshot archives.
//!
//! A snapshot is an uncompressed tar with a `MANIFEST` (same text as the store
//! directory's) and one `<namespace>.jsonl` per namespace. Each line is
//! `{"key":"…","value":…}` with the record's JSON embedded verbatim. Headers
//! carry zeroed mtimes so identical contents produce identical archives.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::journal::check_manifest_text;
use super::{JournalStore, Namespace, StoreError, StorePort, WriteBatch, WriteOp, FORMAT_VERSION};

#[derive(Serialize)]
struct RecordOut<'a> {
    key: &'a str,
    value: &'a RawValue,
}

#[derive(Deserialize)]
struct RecordIn {
    key: String,
    value: Box<RawValue>,
}

fn append(builder: &mut tar::Builder<File>, name: &str, data: &[u8]) -> Result<(), StoreError> {
    let mut header = tar::Header::new_ustar();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_cksum();
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

/// Write every namespace of `store` into a tar archive at `archive`.
pub fn snapshot_export(store: &dyn StorePort, archive: impl AsRef<Path>) -> Result<(), StoreError> {
    let file = File::create(archive.as_ref())?;
    let mut builder = tar::Builder::new(file);
    append(
        &mut builder,
        "MANIFEST",
        format!("smstrack-store {FORMAT_VERSION}\n").as_bytes(),
    )?;
    for ns in Namespace::ALL {
        let mut buf = Vec::new();
        for (key, value) in store.scan(ns)? {
            let raw = RawValue::from_string(value).map_err(|e| StoreError::Encode(e.to_string()))?;
            serde_json::to_writer(&mut buf, &RecordOut { key: &key, value: &raw })
                .map_err(|e| StoreError::Encode(e.to_string()))?;
            buf.push(b'\n');
        }
        append(&mut builder, &format!("{ns}.jsonl"), &buf)?;
    }
    let mut file = builder.into_inner()?;
    file.flush()?;
    file.sync_all()?;
    Ok(())
}

/// Create a new store in `dir` (which must be absent or empty) from `archive`.
pub fn snapshot_import(archive: impl AsRef<Path>, dir: impl AsRef<Path>) -> Result<JournalStore, StoreError> {
    let archive = archive.as_ref();
    let dir = dir.as_ref();
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(StoreError::NotEmpty(dir.to_owned()));
    }

    let mut batch = WriteBatch::new();
    let mut saw_manifest = false;
    let mut tar = tar::Archive::new(File::open(archive)?);
    for entry in tar.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        if name == "MANIFEST" {
            let mut text = String::new();
            entry.read_to_string(&mut text)?;
            check_manifest_text(&text, &archive.join("MANIFEST"))?;
            saw_manifest = true;
            continue;
        }
        let Some(ns) = name.strip_suffix(".jsonl").and_then(Namespace::parse) else {
            return Err(StoreError::Corrupt {
                path: archive.to_owned(),
                line: 0,
                reason: format!("unexpected archive member {name}"),
            });
        };
        for (i, line) in BufReader::new(entry).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: RecordIn = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: archive.join(&name),
                line: i + 1,
                reason: e.to_string(),
            })?;
            batch.ops_mut().push(WriteOp::Put {
                ns,
                key: rec.key,
                value: rec.value.get().to_owned(),
            });
        }
    }
    if !saw_manifest {
        return Err(StoreError::Corrupt {
            path: archive.to_owned(),
            line: 0,
            reason: "archive has no MANIFEST".into(),
        });
    }

    let store = JournalStore::open(dir)?;
    store.commit(batch)?;
    store.compact()?;
    Ok(store)
}

impl WriteBatch {
    fn ops_mut(&mut self) -> &mut Vec<WriteOp> {
        &mut self.ops
    }
}
