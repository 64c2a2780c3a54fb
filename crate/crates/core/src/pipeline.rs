//! Glue used by the command line and the HTTP service.

use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};

use crate::annotation::{run_annotation_batch, Annotator, BatchReport};
use crate::events::{recompute_window, EventParams, EventsError, WindowReport};
use crate::ingestion::{run_ingestion_cycle, AdapterConfig, CycleOptions, IngestError, IngestReport, IntervalId, PageSource};
use crate::store::{CommitBatch, Record, Store, StoreError};
use crate::taxonomy::Taxonomy;

/// Latest stored taxonomy, installing the built-in seed on a fresh store.
pub fn ensure_taxonomy(store: &Store) -> Result<Arc<Taxonomy>, StoreError> {
    store.commit_with(|snap| {
        let mut b = CommitBatch::new();
        if snap.latest_taxonomy().is_none() {
            b.push(Record::Taxonomy(Taxonomy::seed()));
        }
        Ok::<_, StoreError>(b)
    })?;
    Ok(store
        .snapshot()
        .latest_taxonomy()
        .cloned()
        .expect("taxonomy installed above"))
}

/// Runs one ingestion cycle per interval, in order.
pub async fn ingest_intervals(
    configs: &[AdapterConfig],
    source: &dyn PageSource,
    intervals: &[IntervalId],
    store: &Store,
    options: &CycleOptions,
) -> Result<Vec<IngestReport>, IngestError> {
    let mut out = Vec::with_capacity(intervals.len());
    for iv in intervals {
        out.push(run_ingestion_cycle(configs, source, iv, store, options).await?);
    }
    Ok(out)
}

/// Annotates every stored article without a current annotation against the
/// latest taxonomy.
pub async fn annotate_pending(store: &Store, annotator: &Annotator, now: DateTime<Utc>) -> Result<BatchReport, StoreError> {
    let taxonomy = ensure_taxonomy(store)?;
    store.check_writable()?;
    let pending: Vec<_> = store.snapshot().unannotated().cloned().collect();
    Ok(run_annotation_batch(store, pending, annotator, &taxonomy, now).await)
}

/// Recomputes the event windows of every day in `[from, to]`.
pub async fn recompute_range(
    store: &Store,
    from: NaiveDate,
    to: NaiveDate,
    annotator: &Annotator,
    params: &EventParams,
) -> Result<Vec<WindowReport>, EventsError> {
    let mut out = Vec::new();
    let mut day = from;
    while day <= to {
        out.push(recompute_window(store, day, annotator, params).await?);
        day = day.succ_opt().expect("date in range");
    }
    Ok(out)
}

/// Publication dates of all stored articles, ascending.
pub fn article_dates(store: &Store) -> Vec<NaiveDate> {
    let set: std::collections::BTreeSet<NaiveDate> = store.snapshot().articles().map(|a| a.published_date()).collect();
    set.into_iter().collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Events(#[from] EventsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Policy(#[from] crate::annotation::provider::PolicyError),
}

#[derive(Debug, Clone)]
pub struct FixtureRun {
    pub ingest: Vec<IngestReport>,
    pub annotate: BatchReport,
    pub windows: Vec<WindowReport>,
}

/// Ingests a written corpus, labels it with the mock provider and builds
/// every day's events. The provider is not throttled.
pub async fn run_fixture_pipeline(
    store: &Store,
    corpus: &crate::synth::Corpus,
    fixtures: &std::path::Path,
    now: DateTime<Utc>,
) -> Result<FixtureRun, PipelineError> {
    use crate::annotation::mock::MockProvider;
    use crate::annotation::prompt::PromptSet;
    use crate::annotation::provider::RateLimitPolicy;

    ensure_taxonomy(store)?;
    let source = crate::ingestion::FixtureSource::new(fixtures);
    let ingest = ingest_intervals(&corpus.adapters(), &source, &corpus.intervals, store, &CycleOptions::default()).await?;
    let policy = RateLimitPolicy {
        max_requests_per_minute: u32::MAX,
        ..RateLimitPolicy::default()
    };
    let annotator = Annotator::new(Arc::new(MockProvider::new(corpus.lexicon.clone())), policy, PromptSet::builtin())?;
    let annotate = annotate_pending(store, &annotator, now).await?;
    let dates = article_dates(store);
    let windows = match (dates.first(), dates.last()) {
        (Some(from), Some(to)) => recompute_range(store, *from, *to, &annotator, &EventParams::default()).await?,
        _ => Vec::new(),
    };
    Ok(FixtureRun {
        ingest,
        annotate,
        windows,
    })
}
