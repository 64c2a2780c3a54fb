//! Single-directory durable store with atomic batch commits and snapshot reads.
//!
//! One writer, many readers. Every commit produces a new immutable
//! [`Snapshot`]; readers holding an older snapshot never observe later
//! commits. See [`log`] for the file layout.

pub mod log;
mod query;
mod state;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::EventWindow;
use crate::model::{Annotation, Article, ArticleId, ArticleSentences, PublisherId};
use crate::review::{AnnotationFailure, AuditEntry, ReviewTask, TaxonomyProposal};
use crate::taxonomy::Taxonomy;

pub use log::{EntityKind, Manifest};
pub use query::{ArticleRecord, Selector, SelectorKind};
use log::SegmentWriter;
use state::State;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("invalid selector: {0}")]
    InvalidSelector(String),
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(String),
}

/// One put operation. Batches apply in order, so later records may refer
/// to earlier ones in the same batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum Record {
    Article(Article),
    Annotation(Annotation),
    Sentences(ArticleSentences),
    EventWindow(EventWindow),
    Taxonomy(Taxonomy),
    ReviewTask(ReviewTask),
    Audit(AuditEntry),
    Proposal(TaxonomyProposal),
    AnnotationFailure(AnnotationFailure),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommitBatch {
    pub records: Vec<Record>,
}

impl CommitBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, rec: Record) -> Self {
        self.records.push(rec);
        self
    }

    pub fn push(&mut self, rec: Record) {
        self.records.push(rec);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

impl FromIterator<Record> for CommitBatch {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        Self {
            records: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// fsync segments, manifest and directory before `commit` returns.
    Sync,
    /// Leave flushing to the OS. Survives process kill, not power loss.
    Buffered,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub durability: Durability,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            durability: Durability::Sync,
        }
    }
}

/// Test hook: interrupt a commit after segments are written but before the
/// manifest is installed.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FailPoint {
    None = 0,
    /// Return an error and poison the store, as if the process died.
    ErrorBeforeManifest = 1,
    /// Abort the process.
    AbortBeforeManifest = 2,
}

struct Writer {
    manifest: Manifest,
    segments: BTreeMap<EntityKind, SegmentWriter>,
    _lock: File,
}

pub struct Store {
    dir: PathBuf,
    options: StoreOptions,
    writer: Mutex<Writer>,
    current: RwLock<Arc<State>>,
    poisoned: AtomicBool,
    fail_point: AtomicU8,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).finish()
    }
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| log::io_err("create store dir", e))?;
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join("LOCK"))
            .map_err(|e| log::io_err("open lock", e))?;
        lock.try_lock().map_err(|_| {
            StoreError::StoreUnavailable(format!("{} is locked by another process", dir.display()))
        })?;

        let manifest = log::read_manifest(&dir)?.unwrap_or_else(|| Manifest {
            format: log::FORMAT_VERSION,
            ..Manifest::default()
        });
        let lines = log::recover(&dir, &manifest)?;
        let mut state = State::default();
        for line in &lines {
            state
                .apply(&line.rec)
                .map_err(|e| StoreError::Corrupt(format!("replay seq {}: {e}", line.seq)))?;
        }
        state.seq = manifest.seq;

        let mut segments = BTreeMap::new();
        for (kind, names) in &manifest.segments {
            if let Some(last) = names.last() {
                segments.insert(*kind, SegmentWriter::open(&dir, last.clone())?);
            }
        }
        Ok(Self {
            dir,
            options,
            writer: Mutex::new(Writer {
                manifest,
                segments,
                _lock: lock,
            }),
            current: RwLock::new(Arc::new(state)),
            poisoned: AtomicBool::new(false),
            fail_point: AtomicU8::new(FailPoint::None as u8),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    #[doc(hidden)]
    pub fn set_fail_point(&self, fp: FailPoint) {
        self.fail_point.store(fp as u8, Ordering::SeqCst);
    }

    /// Latest committed sequence number.
    pub fn sequence(&self) -> u64 {
        self.current.read().seq
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.current.read().clone(),
            created_at: Utc::now(),
        }
    }

    /// Fails with `StoreUnavailable` if the store can no longer accept writes.
    pub fn check_writable(&self) -> Result<(), StoreError> {
        if self.poisoned.load(Ordering::SeqCst) {
            Err(StoreError::StoreUnavailable(
                "an earlier commit failed; reopen the store".into(),
            ))
        } else {
            Ok(())
        }
    }

    /// Applies `batch` atomically and returns its sequence number.
    pub fn commit(&self, batch: CommitBatch) -> Result<u64, StoreError> {
        self.commit_with(|_| Ok::<_, StoreError>(batch))
    }

    /// Builds a batch from the latest state while holding the writer lock,
    /// giving compare-and-set semantics. An empty batch commits nothing and
    /// returns the current sequence number.
    pub fn commit_with<E, F>(&self, build: F) -> Result<u64, E>
    where
        F: FnOnce(&Snapshot) -> Result<CommitBatch, E>,
        E: From<StoreError>,
    {
        let mut writer = self.writer.lock();
        self.check_writable()?;
        let base = self.snapshot();
        let batch = build(&base)?;
        if batch.is_empty() {
            return Ok(base.sequence());
        }
        let mut next = (*base.state).clone();
        for rec in &batch.records {
            next.apply(rec)?;
        }
        let seq = base.sequence() + 1;
        next.seq = seq;
        self.persist(&mut writer, seq, &batch).inspect_err(|_| {
            self.poisoned.store(true, Ordering::SeqCst);
        })?;
        *self.current.write() = Arc::new(next);
        Ok(seq)
    }

    fn persist(&self, w: &mut Writer, seq: u64, batch: &CommitBatch) -> Result<(), StoreError> {
        let sync = self.options.durability == Durability::Sync;
        let mut by_kind: BTreeMap<EntityKind, Vec<(u64, u32, &Record)>> = BTreeMap::new();
        for (op, rec) in batch.records.iter().enumerate() {
            by_kind
                .entry(EntityKind::of(rec))
                .or_default()
                .push((seq, op as u32, rec));
        }
        let mut manifest = w.manifest.clone();
        for (kind, lines) in by_kind {
            let needs_new = w.segments.get(&kind).map(|s| s.is_full()).unwrap_or(true);
            if needs_new {
                let name = log::segment_name(kind, manifest.next_segment);
                manifest.next_segment += 1;
                manifest.segments.entry(kind).or_default().push(name.clone());
                w.segments.insert(kind, SegmentWriter::open(&self.dir, name)?);
            }
            w.segments
                .get_mut(&kind)
                .expect("segment writer present")
                .append(&lines, sync)?;
        }
        match self.fail_point.load(Ordering::SeqCst) {
            x if x == FailPoint::ErrorBeforeManifest as u8 => {
                return Err(StoreError::Io("injected failure before manifest".into()))
            }
            x if x == FailPoint::AbortBeforeManifest as u8 => std::process::abort(),
            _ => {}
        }
        manifest.seq = seq;
        log::write_manifest(&self.dir, &manifest, sync)?;
        w.manifest = manifest;
        Ok(())
    }

    /// Rewrites the logs keeping only live records: superseded event windows
    /// and proposal versions are dropped. Annotation history and review task
    /// versions are always retained.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        self.check_writable()?;
        let sync = self.options.durability == Durability::Sync;
        let dir = self.dir.clone();
        let lines = log::recover(&dir, &w.manifest)?;

        let mut last_event: BTreeMap<NaiveDate, usize> = BTreeMap::new();
        let mut last_proposal: BTreeMap<String, usize> = BTreeMap::new();
        for (i, l) in lines.iter().enumerate() {
            match &l.rec {
                Record::EventWindow(ev) => {
                    last_event.insert(ev.window_date, i);
                }
                Record::Proposal(p) => {
                    last_proposal.insert(p.id.clone(), i);
                }
                _ => {}
            }
        }
        // Review tasks keep every version so replay sees the same
        // pending -> resolved transitions.
        let keep = |i: usize, rec: &Record| -> bool {
            match rec {
                Record::EventWindow(ev) => last_event.get(&ev.window_date) == Some(&i),
                Record::Proposal(p) => last_proposal.get(&p.id) == Some(&i),
                _ => true,
            }
        };

        let mut manifest = w.manifest.clone();
        let old: Vec<String> = manifest.segments.values().flatten().cloned().collect();
        manifest.segments.clear();
        let mut writers: BTreeMap<EntityKind, SegmentWriter> = BTreeMap::new();
        let mut pending: BTreeMap<EntityKind, Vec<(u64, u32, &Record)>> = BTreeMap::new();
        for (i, l) in lines.iter().enumerate() {
            if keep(i, &l.rec) {
                pending
                    .entry(EntityKind::of(&l.rec))
                    .or_default()
                    .push((l.seq, l.op, &l.rec));
            }
        }
        for (kind, recs) in pending {
            let name = log::segment_name(kind, manifest.next_segment);
            manifest.next_segment += 1;
            manifest.segments.entry(kind).or_default().push(name.clone());
            let mut sw = SegmentWriter::open(&dir, name)?;
            sw.append(&recs, sync)?;
            writers.insert(kind, sw);
        }
        log::write_manifest(&dir, &manifest, sync)?;
        for name in old {
            let _ = std::fs::remove_file(dir.join(name));
        }
        w.manifest = manifest;
        w.segments = writers;
        Ok(())
    }
}

/// Immutable point-in-time view of the store. Cheap to clone and share.
#[derive(Clone, Debug)]
pub struct Snapshot {
    state: Arc<State>,
    created_at: DateTime<Utc>,
}

impl Snapshot {
    /// Identifier of the snapshot: the last sequence number it includes.
    pub fn sequence(&self) -> u64 {
        self.state.seq
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn article_count(&self) -> usize {
        self.state.articles.len()
    }

    pub fn articles(&self) -> impl Iterator<Item = &Arc<Article>> {
        self.state.articles.values()
    }

    pub fn article(&self, id: &ArticleId) -> Option<&Arc<Article>> {
        self.state.articles.get(id)
    }

    pub fn article_by_url(&self, url: &str) -> Option<&Arc<Article>> {
        self.state.by_url.get(url).and_then(|id| self.article(id))
    }

    pub fn has_url(&self, url: &str) -> bool {
        self.state.by_url.contains_key(url)
    }

    pub fn has_body_hash(&self, hash: &str) -> bool {
        self.state.by_body_hash.contains_key(hash)
    }

    pub fn interval_count(&self, publisher: &PublisherId, interval_id: &str) -> u32 {
        self.state
            .interval_counts
            .get(&(publisher.clone(), interval_id.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn annotation(&self, id: &ArticleId) -> Option<&Arc<Annotation>> {
        self.state.annotations.get(id)
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Arc<Annotation>> {
        self.state.annotations.values()
    }

    /// Superseded annotations of an article, oldest first.
    pub fn annotation_history(&self, id: &ArticleId) -> Vec<Arc<Annotation>> {
        self.state
            .history
            .get(id)
            .map(|v| v.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Articles without a current annotation, in id order.
    pub fn unannotated(&self) -> impl Iterator<Item = &Arc<Article>> {
        self.state
            .articles
            .iter()
            .filter(|(id, _)| !self.state.annotations.contains_key(*id))
            .map(|(_, a)| a)
    }

    pub fn sentences(&self, id: &ArticleId) -> Option<&Arc<ArticleSentences>> {
        self.state.sentences.get(id)
    }

    pub fn event_window(&self, date: NaiveDate) -> Option<&Arc<EventWindow>> {
        self.state.event_windows.get(&date)
    }

    pub fn event_windows(&self) -> impl Iterator<Item = &Arc<EventWindow>> {
        self.state.event_windows.values()
    }

    pub fn event_windows_in(
        &self,
        from: NaiveDate,
        to: NaiveDate,
    ) -> impl Iterator<Item = &Arc<EventWindow>> {
        self.state.event_windows.range(from..=to).map(|(_, w)| w)
    }

    pub fn articles_on(&self, date: NaiveDate) -> Vec<Arc<Article>> {
        self.state
            .by_date
            .get(&date)
            .map(|ids| ids.iter().filter_map(|id| self.article(id).cloned()).collect())
            .unwrap_or_default()
    }

    pub fn taxonomy(&self, version: u32) -> Option<&Arc<Taxonomy>> {
        self.state.taxonomies.get(&version)
    }

    pub fn latest_taxonomy(&self) -> Option<&Arc<Taxonomy>> {
        self.state.taxonomies.get_max().map(|(_, t)| t)
    }

    pub fn taxonomies(&self) -> impl Iterator<Item = &Arc<Taxonomy>> {
        self.state.taxonomies.values()
    }

    pub fn review_task(&self, id: &str) -> Option<&Arc<ReviewTask>> {
        self.state.review_tasks.get(id)
    }

    pub fn review_tasks(&self) -> impl Iterator<Item = &Arc<ReviewTask>> {
        self.state.review_tasks.values()
    }

    pub fn audit_log(&self) -> impl Iterator<Item = &Arc<AuditEntry>> {
        self.state.audit.iter()
    }

    pub fn proposal(&self, id: &str) -> Option<&Arc<TaxonomyProposal>> {
        self.state.proposals.get(id)
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Arc<TaxonomyProposal>> {
        self.state.proposals.values()
    }

    pub fn annotation_failure(&self, id: &ArticleId) -> Option<&Arc<AnnotationFailure>> {
        self.state.failures.get(id)
    }

    /// Every record reachable from this snapshot, in a canonical order, for
    /// logical equality checks between stores.
    pub fn logical_records(&self) -> Vec<Record> {
        let s = &self.state;
        let mut out = Vec::new();
        out.extend(s.taxonomies.values().map(|t| Record::Taxonomy((**t).clone())));
        out.extend(s.articles.values().map(|a| Record::Article((**a).clone())));
        for hist in s.history.values() {
            out.extend(hist.iter().map(|a| Record::Annotation((**a).clone())));
        }
        out.extend(s.annotations.values().map(|a| Record::Annotation((**a).clone())));
        out.extend(s.sentences.values().map(|x| Record::Sentences((**x).clone())));
        out.extend(s.event_windows.values().map(|w| Record::EventWindow((**w).clone())));
        out.extend(s.review_tasks.values().map(|t| Record::ReviewTask((**t).clone())));
        out.extend(s.audit.iter().map(|e| Record::Audit((**e).clone())));
        out.extend(s.proposals.values().map(|p| Record::Proposal((**p).clone())));
        out.extend(s.failures.values().map(|f| Record::AnnotationFailure((**f).clone())));
        out
    }
}

#[cfg(test)]
mod tests;
