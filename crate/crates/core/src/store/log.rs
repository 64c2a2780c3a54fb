//! On-disk layout.
//!
//! ```text
//! <store>/
//!   MANIFEST                     JSON: format, committed sequence number, live segments
//!   LOCK                         advisory single-writer lock
//!   <kind>.<NNNNNN>.log          JSON lines: {"seq":S,"op":I,"rec":{...}}
//! ```
//!
//! A batch is appended to the segments of every kind it touches and synced,
//! then the manifest is atomically replaced with the new sequence number.
//! On open, lines with `seq` above the manifest's are discarded and the
//! files truncated back, so a crash mid-commit never exposes part of a batch.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Record, StoreError};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "MANIFEST";
const SEGMENT_LIMIT: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Articles,
    Annotations,
    Sentences,
    Events,
    Taxonomy,
    Review,
    Failures,
}

impl EntityKind {
    pub const ALL: [Self; 7] = [
        Self::Articles,
        Self::Annotations,
        Self::Sentences,
        Self::Events,
        Self::Taxonomy,
        Self::Review,
        Self::Failures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Articles => "articles",
            Self::Annotations => "annotations",
            Self::Sentences => "sentences",
            Self::Events => "events",
            Self::Taxonomy => "taxonomy",
            Self::Review => "review",
            Self::Failures => "failures",
        }
    }

    pub fn of(rec: &Record) -> Self {
        match rec {
            Record::Article(_) => Self::Articles,
            Record::Annotation(_) => Self::Annotations,
            Record::Sentences(_) => Self::Sentences,
            Record::EventWindow(_) => Self::Events,
            Record::Taxonomy(_) => Self::Taxonomy,
            Record::ReviewTask(_) | Record::Audit(_) | Record::Proposal(_) => Self::Review,
            Record::AnnotationFailure(_) => Self::Failures,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub format: u32,
    pub seq: u64,
    /// Live segment file names per kind, oldest first.
    pub segments: BTreeMap<EntityKind, Vec<String>>,
    #[serde(default)]
    pub next_segment: u64,
}

#[derive(Serialize, Deserialize)]
pub struct LogLine {
    pub seq: u64,
    pub op: u32,
    pub rec: Record,
}

#[derive(Serialize)]
struct LogLineRef<'a> {
    seq: u64,
    op: u32,
    rec: &'a Record,
}

pub fn io_err(ctx: &str, e: std::io::Error) -> StoreError {
    StoreError::Io(format!("{ctx}: {e}"))
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>, StoreError> {
    let path = dir.join(MANIFEST);
    match fs::read(&path) {
        Ok(bytes) => {
            let m: Manifest = serde_json::from_slice(&bytes)
                .map_err(|e| StoreError::Corrupt(format!("manifest: {e}")))?;
            if m.format != FORMAT_VERSION {
                return Err(StoreError::Corrupt(format!(
                    "unsupported store format {}",
                    m.format
                )));
            }
            Ok(Some(m))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err("read manifest", e)),
    }
}

pub fn write_manifest(dir: &Path, m: &Manifest, sync: bool) -> Result<(), StoreError> {
    let tmp = dir.join("MANIFEST.tmp");
    let bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
    {
        let mut f = File::create(&tmp).map_err(|e| io_err("create manifest", e))?;
        f.write_all(&bytes).map_err(|e| io_err("write manifest", e))?;
        if sync {
            f.sync_all().map_err(|e| io_err("sync manifest", e))?;
        }
    }
    fs::rename(&tmp, dir.join(MANIFEST)).map_err(|e| io_err("install manifest", e))?;
    if sync {
        sync_dir(dir)?;
    }
    Ok(())
}

pub fn sync_dir(dir: &Path) -> Result<(), StoreError> {
    File::open(dir)
        .and_then(|d| d.sync_all())
        .map_err(|e| io_err("sync dir", e))
}

pub fn segment_name(kind: EntityKind, n: u64) -> String {
    format!("{}.{n:06}.log", kind.name())
}

/// Reads every live segment, truncating each file after its last line
/// with `seq <= committed`. Returns lines sorted by `(seq, op)`.
pub fn recover(dir: &Path, m: &Manifest) -> Result<Vec<LogLine>, StoreError> {
    let mut out = Vec::new();
    for names in m.segments.values() {
        for name in names {
            let path = dir.join(name);
            let file = match OpenOptions::new().read(true).write(true).open(&path) {
                Ok(f) => f,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(io_err("open segment", e)),
            };
            let mut reader = BufReader::new(&file);
            let mut valid_len = 0u64;
            let mut buf = String::new();
            loop {
                buf.clear();
                let n = reader
                    .read_line(&mut buf)
                    .map_err(|e| io_err("read segment", e))?;
                if n == 0 || !buf.ends_with('\n') {
                    break;
                }
                let line: LogLine = match serde_json::from_str(&buf) {
                    Ok(l) => l,
                    Err(_) => break,
                };
                if line.seq > m.seq {
                    break;
                }
                valid_len += n as u64;
                out.push(line);
            }
            let actual = file.metadata().map_err(|e| io_err("stat segment", e))?.len();
            if actual != valid_len {
                file.set_len(valid_len)
                    .map_err(|e| io_err("truncate segment", e))?;
                file.sync_all().map_err(|e| io_err("sync segment", e))?;
            }
        }
    }
    out.sort_by_key(|l| (l.seq, l.op));
    Ok(out)
}

/// Append handle for one entity kind's newest segment.
pub struct SegmentWriter {
    pub name: String,
    path: PathBuf,
    len: u64,
}

impl SegmentWriter {
    pub fn open(dir: &Path, name: String) -> Result<Self, StoreError> {
        let path = dir.join(&name);
        let len = match fs::metadata(&path) {
            Ok(m) => m.len(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(io_err("stat segment", e)),
        };
        Ok(Self { name, path, len })
    }

    pub fn is_full(&self) -> bool {
        self.len >= SEGMENT_LIMIT
    }

    pub fn append(&mut self, lines: &[(u64, u32, &Record)], sync: bool) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for (seq, op, rec) in lines {
            serde_json::to_writer(&mut buf, &LogLineRef { seq: *seq, op: *op, rec })
                .map_err(|e| StoreError::Io(format!("encode record: {e}")))?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err("open segment", e))?;
        // A failed earlier append may have left a partial tail; appends
        // always start at the recorded logical length.
        let actual = f.seek(SeekFrom::End(0)).map_err(|e| io_err("seek", e))?;
        if actual != self.len {
            f.set_len(self.len).map_err(|e| io_err("truncate segment", e))?;
        }
        f.write_all(&buf).map_err(|e| io_err("append segment", e))?;
        if sync {
            f.sync_data().map_err(|e| io_err("sync segment", e))?;
        }
        self.len += buf.len() as u64;
        Ok(())
    }
}
