//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{NaiveDate, TimeZone, Utc};
use http_body_util::BodyExt;
use mbd_api::docs::{EventDoc, EventsDoc, GridDoc, HealthDoc, TaxonomyDoc};
use mbd_api::params::coverage_query;
use mbd_api::{router, ApiConfig, AppState};
use mbd_core::aggregation::{
    coverage, coverage_counts, grid_summary, label_distribution, mean_label, ColorBy, CoverageFilter,
    CoverageSlice,
};
use mbd_core::annotation::provider::{
    ChatProvider, DispatchRecord, Dispatcher, ProviderError, ProviderRequest, ProviderResponse, RateLimitPolicy,
    TokenUsage,
};
use mbd_core::events::{cluster_events, coverage_matrix, events_in_range, EventParams};
use mbd_core::ingestion::{CycleOptions, FixtureSource};
use mbd_core::model::{body_hash, default_publisher_ids};
use mbd_core::pipeline::{ensure_taxonomy, ingest_intervals, run_fixture_pipeline};
use mbd_core::review::{
    agreement_report, create_review_tasks, record_verdict, Dimension, Overrides, ReviewError, ReviewWeek,
    TaskStatus, Verdict,
};
use mbd_core::store::{CommitBatch, FailPoint, Record};
use mbd_core::synth::{generate, convention_day_date, GroundTruth, Preset, SynthConfig};
use mbd_core::{
    Article, ArticleId, ArticleType, LeanLabel, Level, NodeId, OrdinalScale, Provenance, PublisherId,
    ScaleDimension, Store, Taxonomy, ToneLabel,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const CHILD_DIR: &str = "MBD_ACCEPTANCE_CHILD_DIR";
const CHILD_RUN: &str = "MBD_ACCEPTANCE_CHILD_RUN";
const CHILD_ABORT_AT: &str = "MBD_ACCEPTANCE_ABORT_AT";
const BATCH: usize = 5;

type Outcome = Result<String, String>;
type Criterion = fn(&Ctx) -> Outcome;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !{ $cond } {
            return Err(format!($($fmt)+));
        }
    };
}

fn now() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

struct Loaded {
    store: Arc<Store>,
    truth: GroundTruth,
    _dirs: (tempfile::TempDir, tempfile::TempDir),
}

fn load(config: SynthConfig, preset: Preset) -> Loaded {
    let corpus = generate(&config, preset);
    let fixtures = tempfile::tempdir().unwrap();
    corpus.write(fixtures.path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    runtime()
        .block_on(run_fixture_pipeline(&store, &corpus, fixtures.path(), now()))
        .unwrap();
    Loaded {
        truth: corpus.ground_truth(),
        store,
        _dirs: (fixtures, dir),
    }
}

#[derive(Default)]
struct Ctx {
    large: OnceCell<Loaded>,
    filters: OnceCell<Vec<CoverageFilter>>,
}

impl Ctx {
    fn large(&self) -> &Loaded {
        self.large.get_or_init(|| load(SynthConfig::new(2024, 1200), Preset::General))
    }

    fn filters(&self) -> &[CoverageFilter] {
        self.filters.get_or_init(|| {
            let l = self.large();
            let dates: Vec<NaiveDate> = l.truth.articles.iter().map(|a| a.published_at.date_naive()).collect();
            let from = *dates.iter().min().unwrap();
            let to = *dates.iter().max().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(200);
            (0..200).map(|_| random_filter(&mut rng, from, to)).collect()
        })
    }
}

fn random_filter(rng: &mut ChaCha8Rng, from: NaiveDate, to: NaiveDate) -> CoverageFilter {
    let tax = Taxonomy::seed();
    let node = match rng.gen_range(0..4) {
        0 => None,
        k => {
            let level = [Level::Category, Level::Topic, Level::Subtopic][k - 1];
            let ids: Vec<&NodeId> = tax.nodes().iter().filter(|n| n.level == level).map(|n| &n.id).collect();
            Some((*ids.choose(rng).unwrap()).clone())
        }
    };
    let mut pubs = default_publisher_ids();
    pubs.shuffle(rng);
    let mut types = ArticleType::ALL.to_vec();
    types.shuffle(rng);
    let span = (to - from).num_days() + 2;
    let a = from + chrono::Duration::days(rng.gen_range(-1..span));
    let b = from + chrono::Duration::days(rng.gen_range(-1..span));
    CoverageFilter {
        node,
        publishers: pubs.into_iter().take(rng.gen_range(1..=10)).collect(),
        from: a.min(b),
        to: a.max(b),
        article_types: types.into_iter().take(rng.gen_range(1..=3)).collect(),
        color_by: [ColorBy::Category, ColorBy::Lean, ColorBy::Tone][rng.gen_range(0..3)],
        normalized: rng.gen_bool(0.5),
    }
}

// ---------------------------------------------------------------------------
// Exhaustive-scan oracle, written against the raw records only.

struct Row {
    publisher: PublisherId,
    date: NaiveDate,
    kind: ArticleType,
    path: [NodeId; 3],
    tone: ToneLabel,
    lean: LeanLabel,
}

fn rows(store: &Store) -> Vec<Row> {
    let snap = store.snapshot();
    snap.articles()
        .filter_map(|a| {
            let n = snap.annotation(&a.id)?;
            Some(Row {
                publisher: a.publisher_id.clone(),
                date: a.published_at.date_naive(),
                kind: n.article_type,
                path: [n.category_id.clone(), n.topic_id.clone(), n.subtopic_id.clone()],
                tone: n.tone,
                lean: n.lean,
            })
        })
        .collect()
}

fn depth(node: &NodeId) -> usize {
    static DEPTHS: std::sync::OnceLock<HashMap<NodeId, usize>> = std::sync::OnceLock::new();
    let depths = DEPTHS.get_or_init(|| {
        Taxonomy::seed()
            .nodes()
            .iter()
            .map(|n| {
                let d = match n.level {
                    Level::Category => 0,
                    Level::Topic => 1,
                    Level::Subtopic => 2,
                };
                (n.id.clone(), d)
            })
            .collect()
    });
    *depths.get(node).expect("seed node")
}

fn selects(f: &CoverageFilter, r: &Row) -> bool {
    f.publishers.contains(&r.publisher)
        && f.from <= r.date
        && r.date <= f.to
        && f.article_types.contains(&r.kind)
        && f.node.as_ref().is_none_or(|n| r.path[depth(n)] == *n)
}

fn oracle_keys(f: &CoverageFilter) -> Vec<String> {
    let seed = Taxonomy::seed();
    match &f.node {
        None => seed.nodes().iter().filter(|n| n.parent_id.is_none()).map(|n| n.id.0.clone()).collect(),
        Some(n) if depth(n) == 2 => vec![n.0.clone()],
        Some(n) => seed
            .nodes()
            .iter()
            .filter(|c| c.parent_id.as_ref() == Some(n))
            .map(|c| c.id.0.clone())
            .collect(),
    }
}

fn oracle_key(f: &CoverageFilter, r: &Row) -> String {
    let d = match &f.node {
        None => 0,
        Some(n) => (depth(n) + 1).min(2),
    };
    r.path[d].0.clone()
}

fn numeric<S: OrdinalScale>(s: S) -> i64 {
    S::ALL.iter().position(|x| *x == s).unwrap() as i64 - 2
}

fn compare_slice(
    name: &str,
    slice: &CoverageSlice,
    keys: &[String],
    f: &CoverageFilter,
    counts: &BTreeMap<(PublisherId, String), u64>,
) -> Result<(), String> {
    check!(slice.keys == keys, "{name}: keys {:?} != {:?}", slice.keys, keys);
    let pubs: Vec<&PublisherId> = slice.publishers.iter().map(|p| &p.publisher_id).collect();
    check!(pubs == f.publishers.iter().collect::<Vec<_>>(), "{name}: publisher rows differ");
    for p in &slice.publishers {
        for s in &p.segments {
            let want = counts.get(&(p.publisher_id.clone(), s.key.clone())).copied().unwrap_or(0);
            check!(s.count == want, "{name}: {} {} count {} != {}", p.publisher_id, s.key, s.count, want);
        }
    }
    Ok(())
}

fn aggregation_oracle(ctx: &Ctx) -> Outcome {
    let started = Instant::now();
    let l = ctx.large();
    check!(l.truth.articles.len() >= 1000, "corpus has {} articles", l.truth.articles.len());
    let seen: BTreeSet<&PublisherId> = l.truth.articles.iter().map(|a| &a.publisher_id).collect();
    check!(seen.len() == 10, "corpus covers {} publishers", seen.len());
    let snap = l.store.snapshot();
    let data = rows(&l.store);
    check!(data.len() == l.truth.articles.len(), "{} of {} annotated", data.len(), l.truth.articles.len());
    let mut nonempty = 0;
    let mut mean_cells = 0;
    for (i, f) in ctx.filters().iter().enumerate() {
        let sel: Vec<&Row> = data.iter().filter(|r| selects(f, r)).collect();
        nonempty += usize::from(!sel.is_empty());
        let keys = oracle_keys(f);

        let mut by_child: BTreeMap<(PublisherId, String), u64> = BTreeMap::new();
        let mut sums: HashMap<(PublisherId, String), [i64; 3]> = HashMap::new();
        let mut by_lean: BTreeMap<(PublisherId, String), u64> = BTreeMap::new();
        let mut by_tone: BTreeMap<(PublisherId, String), u64> = BTreeMap::new();
        for r in &sel {
            let k = oracle_key(f, r);
            *by_child.entry((r.publisher.clone(), k.clone())).or_default() += 1;
            let cell = sums.entry((r.publisher.clone(), k)).or_default();
            cell[0] += numeric(r.lean);
            cell[1] += numeric(r.tone);
            cell[2] += 1;
            *by_lean.entry((r.publisher.clone(), r.lean.label().to_string())).or_default() += 1;
            *by_tone.entry((r.publisher.clone(), r.tone.label().to_string())).or_default() += 1;
        }

        let counts = coverage_counts(&snap, f).map_err(|e| e.to_string())?;
        compare_slice(&format!("filter {i} counts"), &counts, &keys, f, &by_child)?;
        let lean_keys: Vec<String> = LeanLabel::ALL.iter().map(|l| l.label().to_string()).collect();
        let tone_keys: Vec<String> = ToneLabel::ALL.iter().map(|l| l.label().to_string()).collect();
        let lean = label_distribution(&snap, f, ScaleDimension::Lean).map_err(|e| e.to_string())?;
        compare_slice(&format!("filter {i} lean"), &lean, &lean_keys, f, &by_lean)?;
        let tone = label_distribution(&snap, f, ScaleDimension::Tone).map_err(|e| e.to_string())?;
        compare_slice(&format!("filter {i} tone"), &tone, &tone_keys, f, &by_tone)?;

        for (dim, slot) in [(ScaleDimension::Lean, 0), (ScaleDimension::Tone, 1)] {
            let table = mean_label(&snap, f, dim).map_err(|e| e.to_string())?;
            check!(table.keys == keys, "filter {i} mean keys differ");
            for p in &f.publishers {
                for k in &keys {
                    let want = sums.get(&(p.clone(), k.clone())).map(|c| c[slot] as f64 / c[2] as f64);
                    let got = table.get(p, k);
                    match (got, want) {
                        (None, None) => {}
                        (Some(g), Some(w)) => {
                            mean_cells += 1;
                            check!((g - w).abs() <= 1e-12, "filter {i} {dim:?} mean {p} {k}: {g} vs {w}");
                        }
                        _ => return Err(format!("filter {i} {dim:?} mean {p} {k}: {got:?} vs {want:?}")),
                    }
                }
            }
        }

        let grid = grid_summary(&snap, f).map_err(|e| e.to_string())?;
        check!(grid.rows.len() == keys.len(), "filter {i} grid rows");
        for (row, key) in grid.rows.iter().zip(&keys) {
            check!(&row.key == key, "filter {i} grid key");
            let want: Vec<u64> = f
                .publishers
                .iter()
                .map(|p| by_child.get(&(p.clone(), key.clone())).copied().unwrap_or(0))
                .collect();
            check!(row.counts == want, "filter {i} grid counts for {key}");
            let max = want.iter().copied().max().unwrap_or(0);
            let marker = (max > 0).then(|| f.publishers.iter().zip(&want).find(|(_, c)| **c == max).unwrap().0);
            check!(
                row.marker.as_ref().map(|m| &m.publisher_id) == marker,
                "filter {i} grid marker for {key}"
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "{} articles, 200 filters ({nonempty} non-empty), {mean_cells} mean cells, {secs:.1}s incl. corpus build",
        data.len()
    ))
}

fn partition_laws(ctx: &Ctx) -> Outcome {
    let l = ctx.large();
    let snap = l.store.snapshot();
    let seed = Taxonomy::seed();
    let mut checks = 0usize;
    for (i, f) in ctx.filters().iter().enumerate() {
        let counts = coverage_counts(&snap, f).map_err(|e| e.to_string())?;
        let totals: BTreeMap<&PublisherId, u64> = counts
            .publishers
            .iter()
            .map(|p| (&p.publisher_id, p.segments.iter().map(|s| s.count).sum()))
            .collect();

        // The node's own count one level up equals the sum of its children.
        let parent = f.node.as_ref().map(|n| seed.node(n).unwrap().parent_id.clone());
        if let Some(parent) = parent {
            let up = coverage_counts(&snap, &CoverageFilter { node: parent, ..f.clone() }).map_err(|e| e.to_string())?;
            let me = f.node.as_ref().unwrap().0.clone();
            for p in &up.publishers {
                let seg = p.segments.iter().find(|s| s.key == me).map(|s| s.count).unwrap_or(0);
                check!(seg == totals[&p.publisher_id], "filter {i}: parent count {seg} != child sum for {}", p.publisher_id);
                checks += 1;
            }
        }
        // Each segment equals the total of drilling into it.
        if f.node.as_ref().is_none_or(|n| depth(n) < 2) {
            for key in &counts.keys {
                let down = coverage_counts(&snap, &CoverageFilter { node: Some(NodeId::new(key.clone())), ..f.clone() })
                    .map_err(|e| e.to_string())?;
                for (p, d) in counts.publishers.iter().zip(&down.publishers) {
                    let seg = p.segments.iter().find(|s| &s.key == key).unwrap().count;
                    let sum: u64 = d.segments.iter().map(|s| s.count).sum();
                    check!(seg == sum, "filter {i}: {key} count {seg} != drill-down sum {sum}");
                    checks += 1;
                }
            }
        }
        for dim in [ScaleDimension::Lean, ScaleDimension::Tone] {
            let dist = label_distribution(&snap, f, dim).map_err(|e| e.to_string())?;
            for p in &dist.publishers {
                let sum: u64 = p.segments.iter().map(|s| s.count).sum();
                check!(sum == totals[&p.publisher_id], "filter {i}: {dim:?} buckets sum {sum} != total");
                checks += 1;
            }
        }
        let norm = coverage(&snap, &CoverageFilter { normalized: true, ..f.clone() }).map_err(|e| e.to_string())?;
        for p in &norm.publishers {
            let sum: f64 = p.segments.iter().map(|s| s.proportion).sum();
            if p.total == 0 {
                check!(p.empty && sum == 0.0, "filter {i}: empty publisher not flagged");
            } else {
                check!((sum - 1.0).abs() <= 1e-9, "filter {i}: proportions sum to {sum}");
            }
            checks += 1;
        }
    }
    Ok(format!("{checks} equalities over 200 filters"))
}

fn convention_day_events(_: &Ctx) -> Outcome {
    let started = Instant::now();
    let l = load(SynthConfig::new(33, 60), Preset::ConventionDay);
    let day = convention_day_date();
    let snap = l.store.snapshot();
    let events = events_in_range(&snap, day, day);
    let secs = started.elapsed().as_secs_f64();
    let imp: Vec<u32> = events.iter().map(|e| e.importance).collect();
    check!(imp == vec![33, 7], "importances {imp:?}");
    let publishers = default_publisher_ids();
    let matrix = coverage_matrix(&events, &publishers);
    check!(matrix.publishers == publishers, "matrix columns");
    for (event, row) in events.iter().zip(&matrix.rows) {
        let truth = l
            .truth
            .events
            .iter()
            .find(|t| t.article_ids.len() == event.importance as usize)
            .ok_or("no planted group of that size")?;
        let mut ids = event.article_ids.clone();
        ids.sort();
        check!(ids == truth.article_ids, "{} members differ from planted {}", event.id, truth.group);
        let covered: BTreeSet<&PublisherId> = l
            .truth
            .articles
            .iter()
            .filter(|a| truth.article_ids.contains(&a.article_id))
            .map(|a| &a.publisher_id)
            .collect();
        let want: Vec<bool> = publishers.iter().map(|p| covered.contains(p)).collect();
        check!(row.cells == want, "{} coverage row {:?} != {:?}", truth.group, row.cells, want);
    }
    check!(secs < 5.0, "took {secs:.2}s");
    let cease: Vec<&str> = publishers
        .iter()
        .zip(&matrix.rows[1].cells)
        .filter(|(_, c)| **c)
        .map(|(p, _)| p.as_str())
        .collect();
    Ok(format!("importances 33, 7; ceasefire row {}; {secs:.2}s", cease.join(",")))
}

fn clustering_purity(_: &Ctx) -> Outcome {
    let mut clustered = 0usize;
    let mut groups = 0usize;
    for run in 0..10u64 {
        let corpus = generate(&SynthConfig::new(1000 + run, 400), Preset::General);
        let truth = corpus.ground_truth();
        let class: BTreeMap<ArticleId, String> = truth
            .articles
            .iter()
            .map(|a| (a.article_id.clone(), a.event_group.clone().unwrap_or_else(|| format!("solo-{}", a.article_id))))
            .collect();
        let mut by_day: BTreeMap<NaiveDate, Vec<Arc<Article>>> = BTreeMap::new();
        for a in corpus.expected_articles() {
            by_day.entry(a.published_date()).or_default().push(Arc::new(a));
        }
        let mut found: Vec<Vec<ArticleId>> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        for (day, articles) in &by_day {
            let params = EventParams::default();
            let first = cluster_events(*day, articles, &params);
            let mut shuffled = articles.clone();
            shuffled.shuffle(&mut rng);
            let bytes = serde_json::to_vec(&first).unwrap();
            check!(bytes == serde_json::to_vec(&cluster_events(*day, articles, &params)).unwrap(), "run {run}: repeat differs");
            check!(bytes == serde_json::to_vec(&cluster_events(*day, &shuffled, &params)).unwrap(), "run {run}: input order matters");
            found.extend(first.into_iter().map(|e| e.article_ids));
        }
        // Purity: each found cluster is drawn from one planted class.
        let mut agree = 0usize;
        let total: usize = found.iter().map(Vec::len).sum();
        for c in &found {
            let mut tally: BTreeMap<&String, usize> = BTreeMap::new();
            for a in c {
                *tally.entry(&class[a]).or_default() += 1;
            }
            agree += tally.values().max().copied().unwrap_or(0);
        }
        let purity = if total == 0 { 1.0 } else { agree as f64 / total as f64 };
        check!(purity == 1.0, "run {run}: purity {purity}");
        let mut got: Vec<Vec<ArticleId>> = found
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        got.sort();
        let mut want: Vec<Vec<ArticleId>> = truth.events.iter().map(|e| e.article_ids.clone()).collect();
        want.sort();
        check!(got == want, "run {run}: {} clusters vs {} planted groups", got.len(), want.len());
        clustered += total;
        groups += want.len();
    }
    Ok(format!("10 runs, {groups} planted groups, {clustered} clustered articles, purity 1.0"))
}

/// Replies after a random delay in `latency_ms`; an empty range replies at once.
struct Sleepy {
    rng: std::sync::Mutex<ChaCha8Rng>,
    latency_ms: std::ops::Range<u64>,
}

#[async_trait::async_trait]
impl ChatProvider for Sleepy {
    fn model_id(&self) -> &str {
        "sleepy"
    }

    async fn complete(&self, _request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let ms = if self.latency_ms.is_empty() {
            0
        } else {
            self.rng.lock().unwrap().gen_range(self.latency_ms.clone())
        };
        if ms > 0 {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        Ok(ProviderResponse {
            text: "ok".into(),
            usage: TokenUsage::default(),
            latency: Duration::from_millis(ms),
            status: 200,
        })
    }
}

fn window_max(trace: &[DispatchRecord]) -> usize {
    let mut t: Vec<Duration> = trace.iter().map(|r| r.dispatched).collect();
    t.sort();
    let mut best = 0;
    for i in 0..t.len() {
        let n = t[i..].iter().take_while(|x| **x < t[i] + Duration::from_secs(60)).count();
        best = best.max(n);
    }
    best
}

fn in_flight_max(trace: &[DispatchRecord]) -> usize {
    let mut points: Vec<Duration> = trace.iter().map(|r| r.dispatched).collect();
    points.sort();
    points
        .iter()
        .map(|&t| trace.iter().filter(|r| r.dispatched <= t && t < r.completed).count())
        .max()
        .unwrap_or(0)
}

fn dispatch_1000(latency_ms: std::ops::Range<u64>) -> (Vec<DispatchRecord>, Duration) {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .unwrap();
    rt.block_on(async {
        let provider = Arc::new(Sleepy {
            rng: std::sync::Mutex::new(ChaCha8Rng::seed_from_u64(500)),
            latency_ms,
        });
        let policy = RateLimitPolicy::default();
        assert_eq!((policy.max_requests_per_minute, policy.max_in_flight), (500, 32));
        let d = Arc::new(Dispatcher::new(provider, policy).unwrap());
        let start = tokio::time::Instant::now();
        let tasks: Vec<_> = (0..1000)
            .map(|i| {
                let d = d.clone();
                tokio::spawn(async move { d.send(&ProviderRequest::new("sleepy", format!("req {i}"), 8)).await })
            })
            .collect();
        for t in tasks {
            t.await.unwrap().unwrap();
        }
        (d.trace(), start.elapsed())
    })
}

fn rate_limit_safety(_: &Ctx) -> Outcome {
    let mut parts = Vec::new();
    for (label, latency) in [("instant", 0..0), ("20-4000 ms", 20..4000)] {
        let (trace, elapsed) = dispatch_1000(latency);
        check!(trace.len() == 1000, "{label}: {} dispatches", trace.len());
        check!(trace.iter().all(|r| r.ok), "{label}: failed dispatches");
        let w = window_max(&trace);
        let f = in_flight_max(&trace);
        check!(w <= 500, "{label}: a 60 s window holds {w} dispatches");
        check!(f <= 32, "{label}: {f} requests in flight");
        parts.push(format!("{label}: {:.0} simulated s, max/60 s {w}, max in flight {f}", elapsed.as_secs_f64()));
    }
    Ok(format!("1000 requests each; {}", parts.join("; ")))
}

fn labels_match_truth(store: &Store, truth: &GroundTruth) -> Result<(), String> {
    let snap = store.snapshot();
    for t in &truth.articles {
        let a = snap.annotation(&t.article_id).ok_or_else(|| format!("{} not annotated", t.article_id))?;
        check!(
            a.subtopic_id == t.subtopic_id && a.article_type == t.article_type && a.tone == t.tone && a.lean == t.lean,
            "{} labels differ from planted",
            t.article_id
        );
        let kinds: Vec<_> = snap.sentences(&t.article_id).unwrap().sentences.iter().map(|s| s.sentence_type).collect();
        check!(kinds == t.sentence_types, "{} sentence types differ", t.article_id);
    }
    Ok(())
}

fn pipeline_determinism(_: &Ctx) -> Outcome {
    let a = load(SynthConfig::new(42, 300), Preset::General);
    let b = load(SynthConfig::new(42, 300), Preset::General);
    let ra = a.store.snapshot().logical_records();
    let rb = b.store.snapshot().logical_records();
    check!(ra.len() == rb.len(), "record counts {} vs {}", ra.len(), rb.len());
    check!(ra == rb, "logical records differ");
    labels_match_truth(&a.store, &a.truth)?;
    let f = CoverageFilter::default();
    check!(
        coverage(&a.store.snapshot(), &f).unwrap() == coverage(&b.store.snapshot(), &f).unwrap(),
        "aggregates differ"
    );
    Ok(format!("{} identical records; {} articles labeled as planted", ra.len(), a.truth.articles.len()))
}

fn ingestion_caps(_: &Ctx) -> Outcome {
    let config = SynthConfig {
        per_front_page: 20,
        ..SynthConfig::new(20, 1600)
    };
    let corpus = generate(&config, Preset::General);
    let truth = corpus.ground_truth();
    check!(truth.overflow_links > 0, "corpus has no overflow links");
    let fixtures = tempfile::tempdir().unwrap();
    corpus.write(fixtures.path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let source = FixtureSource::new(fixtures.path());
    let rt = runtime();
    let first = rt
        .block_on(async {
            ensure_taxonomy(&store).map_err(|e| e.to_string())?;
            ingest_intervals(&corpus.adapters(), &source, &corpus.intervals, &store, &CycleOptions::default())
                    .await
                    .map_err(|e| e.to_string())
        })?;
    let snap = store.snapshot();
    let mut per: BTreeMap<(PublisherId, String), Vec<u8>> = BTreeMap::new();
    for a in snap.articles() {
        per.entry((a.publisher_id.clone(), a.interval_id.clone())).or_default().push(a.interval_rank);
    }
    let full = per.values().filter(|r| r.len() == 20).count();
    for ((p, iv), ranks) in &per {
        check!(ranks.len() <= 20, "{p} {iv} holds {}", ranks.len());
        let distinct: BTreeSet<_> = ranks.iter().collect();
        check!(distinct.len() == ranks.len() && ranks.iter().all(|r| (1..=20).contains(r)), "{p} {iv} ranks {ranks:?}");
    }
    let new: u32 = first.iter().map(|r| r.total_new()).sum();
    check!(new as usize == snap.article_count(), "report new {new} vs stored {}", snap.article_count());
    let again = rt
        .block_on(ingest_intervals(&corpus.adapters(), &source, &corpus.intervals, &store, &CycleOptions::default()))
        .map_err(|e| e.to_string())?;
    let renew: u32 = again.iter().map(|r| r.total_new()).sum();
    check!(renew == 0, "rerun stored {renew} new articles");
    check!(store.snapshot().article_count() == snap.article_count(), "rerun changed the store");
    Ok(format!(
        "{} articles, {} overflow links offered, {full} full pages capped at 20, rerun new=0",
        snap.article_count(),
        truth.overflow_links
    ))
}

// ---------------------------------------------------------------------------
// Durability: a child process commits numbered batches and is killed.

fn durability_article(run: &str, batch: usize, k: usize) -> Article {
    let url = format!("https://ap.example/durability/{run}/{batch}/{k}");
    let body = format!("Batch {batch} item {k} of run {run}.");
    let hash = body_hash(&body);
    let at = Utc.with_ymd_and_hms(2024, 8, 1, 0, 0, 0).unwrap();
    Article {
        id: ArticleId::derive(&url, &hash),
        publisher_id: PublisherId::new("ap"),
        url,
        title: format!("{run} {batch} {k}"),
        body,
        published_at: at,
        collected_at: at,
        interval_rank: k as u8 + 1,
        interval_id: format!("dur-{run}-{batch}"),
        body_hash: hash,
        published_at_fallback: false,
    }
}

fn child_main(dir: &str) {
    let run = std::env::var(CHILD_RUN).unwrap();
    let abort_at: Option<usize> = std::env::var(CHILD_ABORT_AT).ok().map(|v| v.parse().unwrap());
    let store = Store::open(dir).unwrap();
    let mut out = std::io::stdout().lock();
    for batch in 0.. {
        if Some(batch) == abort_at {
            store.set_fail_point(FailPoint::AbortBeforeManifest);
        }
        let mut b = CommitBatch::new();
        for k in 0..BATCH {
            b.push(Record::Article(durability_article(&run, batch, k)));
        }
        store.commit(b).unwrap();
        use std::io::Write;
        writeln!(out, "{batch}").unwrap();
        out.flush().unwrap();
    }
}

/// Batches present per run, failing on any partial batch.
fn batches(dir: &Path) -> Result<BTreeMap<String, BTreeSet<usize>>, String> {
    let store = Store::open(dir).map_err(|e| e.to_string())?;
    let mut items: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for a in store.snapshot().articles() {
        let parts: Vec<&str> = a.url.rsplit('/').take(3).collect();
        let (batch, run) = (parts[1].parse().unwrap(), parts[2].to_string());
        *items.entry((run, batch)).or_default() += 1;
    }
    let mut out: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for ((run, batch), n) in items {
        check!(n == BATCH, "run {run} batch {batch} is partial ({n} of {BATCH})");
        out.entry(run).or_default().insert(batch);
    }
    Ok(out)
}

fn spawn_child(dir: &Path, run: &str, abort_at: Option<usize>) -> std::process::Child {
    let mut cmd = Command::new(std::env::current_exe().unwrap());
    cmd.env(CHILD_DIR, dir).env(CHILD_RUN, run).stdout(Stdio::piped()).stderr(Stdio::null());
    if let Some(k) = abort_at {
        cmd.env(CHILD_ABORT_AT, k.to_string());
    }
    cmd.spawn().unwrap()
}

fn durability(_: &Ctx) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut acked: BTreeMap<String, usize> = BTreeMap::new();
    for r in 0..6 {
        let run = format!("kill{r}");
        let target = rng.gen_range(3..40);
        let mut child = spawn_child(dir.path(), &run, None);
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let mut last = None;
        for _ in 0..target {
            match lines.next() {
                Some(Ok(l)) => last = Some(l.parse::<usize>().unwrap()),
                _ => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("{run}: child stopped early"));
                }
            }
        }
        child.kill().unwrap();
        child.wait().unwrap();
        // Count anything the child managed to report before dying.
        for l in lines.map_while(Result::ok) {
            last = Some(l.parse().unwrap());
        }
        acked.insert(run, last.unwrap());
    }
    let present = batches(dir.path())?;
    for (run, last) in &acked {
        let got = present.get(run).cloned().unwrap_or_default();
        check!((0..=*last).all(|b| got.contains(&b)), "{run}: acknowledged batch missing");
        check!(got.iter().all(|b| *b <= last + 1), "{run}: unexpected batches {got:?}");
    }

    let abort_at = 7;
    let mut child = spawn_child(dir.path(), "abort", Some(abort_at));
    let out = child.stdout.take().unwrap();
    let acked_lines: Vec<usize> = BufReader::new(out).lines().map_while(Result::ok).map(|l| l.parse().unwrap()).collect();
    let status = child.wait().unwrap();
    check!(!status.success(), "aborting child exited cleanly");
    check!(acked_lines == (0..abort_at).collect::<Vec<_>>(), "abort child acknowledged {acked_lines:?}");
    let present = batches(dir.path())?;
    let got = present.get("abort").cloned().unwrap_or_default();
    check!(got == (0..abort_at).collect(), "after abort: {got:?}");

    // The recovered store accepts new commits and keeps them.
    {
        let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
        let mut b = CommitBatch::new();
        for k in 0..BATCH {
            b.push(Record::Article(durability_article("after", 0, k)));
        }
        store.commit(b).map_err(|e| e.to_string())?;
    }
    let present = batches(dir.path())?;
    check!(present.get("after").is_some_and(|s| s.len() == 1), "post-recovery batch lost");
    let total: usize = present.values().map(BTreeSet::len).sum();
    Ok(format!("6 kills and 1 abort mid-commit; {total} whole batches, no partial batch, acknowledged batches kept"))
}

// ---------------------------------------------------------------------------

const SCHEMA: &str = include_str!("../../api/schemas/v1.schema.json");

fn validate(def: &str, body: &[u8]) -> Result<Value, String> {
    let mut schema: Value = serde_json::from_str(SCHEMA).unwrap();
    schema["$ref"] = Value::String(format!("#/$defs/{def}"));
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("{def}: {e}"))?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| format!("{e} at {}", e.instance_path())).collect();
    check!(errors.is_empty(), "{def}: {errors:?}");
    Ok(v)
}

async fn fetch(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    use tower::ServiceExt;
    let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn fetch_doc<T: serde::de::DeserializeOwned>(app: &axum::Router, uri: &str, def: &str) -> Result<T, String> {
    let (status, body) = fetch(app, uri).await;
    check!(status == StatusCode::OK, "{uri}: {status}");
    serde_json::from_value(validate(def, &body)?).map_err(|e| e.to_string())
}

fn api_equivalence(ctx: &Ctx) -> Outcome {
    let l = ctx.large();
    let snap = l.store.snapshot();
    let app = router(AppState::new(
        l.store.clone(),
        ApiConfig {
            as_of: l.truth.articles.iter().map(|a| a.published_at.date_naive()).max(),
            ..ApiConfig::default()
        },
    ));
    let filters: Vec<CoverageFilter> = ctx.filters().iter().take(50).cloned().collect();
    let mut responses = 0usize;
    runtime().block_on(async {
        let _: HealthDoc = fetch_doc(&app, "/healthz", "Health").await?;
        let t: TaxonomyDoc = fetch_doc(&app, "/api/v1/taxonomy", "Taxonomy").await?;
        check!(t == TaxonomyDoc::from(snap.latest_taxonomy().unwrap().as_ref()), "taxonomy body differs");
        responses += 2;
        for (i, f) in filters.iter().enumerate() {
            let q = coverage_query(f);
            let got: CoverageSlice = fetch_doc(&app, &format!("/api/v1/coverage?{q}"), "CoverageSlice").await?;
            check!(got == coverage(&snap, f).unwrap(), "filter {i}: coverage body differs");
            let grid: GridDoc = fetch_doc(&app, &format!("/api/v1/coverage/grid?{q}"), "GridDoc").await?;
            check!(grid.grid == grid_summary(&snap, f).unwrap(), "filter {i}: grid body differs");
            let means = f.color_by.dimension().map(|d| mean_label(&snap, f, d).unwrap());
            check!(grid.means == means, "filter {i}: means differ");
            let events: EventsDoc = fetch_doc(&app, &format!("/api/v1/events?from={}&to={}", f.from.format("%Y%m%d"), f.to.format("%Y%m%d")), "Events").await?;
            let direct = events_in_range(&snap, f.from, f.to);
            check!(events.events.len() == direct.len(), "filter {i}: event count differs");
            check!(events.events.iter().zip(&direct).all(|(r, e)| r.id == e.id && r.importance == e.importance), "filter {i}: event rows differ");
            if let Some(e) = direct.first() {
                let doc: EventDoc = fetch_doc(&app, &format!("/api/v1/events/{}", e.id), "EventDoc").await?;
                check!(&doc.event == e, "filter {i}: event detail differs");
                responses += 1;
            }
            responses += 3;

            let (status, body) = fetch(&app, &format!("/api/v1/export.csv?{q}&granularity=aggregate")).await;
            check!(status == StatusCode::OK, "filter {i}: export status {status}");
            let slice = coverage(&snap, f).unwrap();
            let mut rebuilt: BTreeMap<(String, String), (u64, u64, f64)> = BTreeMap::new();
            for rec in csv::Reader::from_reader(body.as_slice()).records() {
                let r = rec.map_err(|e| e.to_string())?;
                rebuilt.insert(
                    (r[0].to_string(), r[2].to_string()),
                    (r[3].parse().unwrap(), r[4].parse().unwrap(), r[5].parse().unwrap()),
                );
            }
            let mut n = 0;
            for p in &slice.publishers {
                for s in &p.segments {
                    n += 1;
                    let got = rebuilt.get(&(p.publisher_id.to_string(), s.key.clone()));
                    check!(got == Some(&(s.count, p.total, s.proportion)), "filter {i}: csv row {} {}", p.publisher_id, s.key);
                }
            }
            check!(rebuilt.len() == n, "filter {i}: csv has {} rows, want {n}", rebuilt.len());
            responses += 1;
        }
        for (uri, code) in [
            ("/api/v1/coverage?from=20240902&to=20240901", StatusCode::BAD_REQUEST),
            ("/api/v1/coverage?node=missing", StatusCode::NOT_FOUND),
            ("/api/v1/events/ev-20000101-00000000", StatusCode::NOT_FOUND),
        ] {
            let (status, body) = fetch(&app, uri).await;
            check!(status == code, "{uri}: {status}");
            validate("Error", &body)?;
            responses += 1;
        }
        Ok::<_, String>(())
    })?;
    Ok(format!("50 filters, {responses} responses equal to module output and schema-valid, csv round-trips"))
}

fn review_audit(_: &Ctx) -> Outcome {
    let l = load(SynthConfig::new(77, 1000), Preset::General);
    let store = &l.store;
    let week = ReviewWeek::containing(l.truth.articles[0].published_at.date_naive());
    let taxonomy = Taxonomy::seed();
    let subtopics: Vec<NodeId> = taxonomy.nodes().iter().filter(|n| n.level == Level::Subtopic).map(|n| n.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    // task id -> (verdict day, overridden dimensions)
    let mut resolved: BTreeMap<String, (NaiveDate, Vec<Dimension>)> = BTreeMap::new();
    let mut rejected_doubles = 0;
    let mut overrides = 0;
    for seq in 0..100 {
        let tasks = create_review_tasks(store, week, 5, seq).map_err(|e| e.to_string())?.tasks;
        check!(tasks.len() == 5, "sequence {seq}: sampled {}", tasks.len());
        for _ in 0..rng.gen_range(3..12) {
            let task = &tasks[rng.gen_range(0..tasks.len())];
            let day = 1 + rng.gen_range(0..5);
            let at = Utc.with_ymd_and_hms(2024, 9, day, 12, 0, 0).unwrap();
            let snap = store.snapshot();
            let before = snap.annotation(&task.article_id).unwrap().clone();
            let audits = snap.audit_log().count();
            let history = snap.annotation_history(&task.article_id).len();
            let verdict = if rng.gen_bool(0.4) {
                Verdict::Approve
            } else {
                let mut ov = Overrides::default();
                if rng.gen_bool(0.3) {
                    ov.subtopic_id = Some(subtopics.choose(&mut rng).unwrap().clone());
                }
                if rng.gen_bool(0.3) {
                    ov.article_type = Some(*ArticleType::ALL.choose(&mut rng).unwrap());
                }
                if rng.gen_bool(0.5) {
                    ov.tone = Some(*ToneLabel::ALL.choose(&mut rng).unwrap());
                }
                if rng.gen_bool(0.5) || ov == Overrides::default() {
                    ov.lean = Some(*LeanLabel::ALL.choose(&mut rng).unwrap());
                }
                Verdict::Override(ov)
            };
            let seq_before = store.sequence();
            let result = record_verdict(store, &task.id, &verdict, "rev", at);
            let snap = store.snapshot();
            if resolved.contains_key(&task.id) {
                check!(matches!(result, Err(ReviewError::TaskAlreadyResolved(_))), "double verdict accepted on {}", task.id);
                check!(store.sequence() == seq_before, "rejected verdict changed the store");
                rejected_doubles += 1;
                continue;
            }
            let expected_dims: Vec<Dimension> = match &verdict {
                Verdict::Approve => Vec::new(),
                Verdict::Override(ov) => {
                    let mut d = Vec::new();
                    if ov.subtopic_id.as_ref().is_some_and(|s| *s != before.subtopic_id) {
                        d.push(Dimension::Taxonomy);
                    }
                    if ov.article_type.is_some_and(|t| t != before.article_type) {
                        d.push(Dimension::ArticleType);
                    }
                    if ov.tone.is_some_and(|t| t != before.tone) {
                        d.push(Dimension::Tone);
                    }
                    if ov.lean.is_some_and(|t| t != before.lean) {
                        d.push(Dimension::Lean);
                    }
                    d
                }
            };
            if matches!(verdict, Verdict::Override(_)) && expected_dims.is_empty() {
                check!(matches!(result, Err(ReviewError::InvalidOverrideLabel(_))), "no-op override accepted");
                check!(store.sequence() == seq_before, "rejected override changed the store");
                continue;
            }
            let out = result.map_err(|e| format!("verdict on {}: {e}", task.id))?;
            check!(snap.audit_log().count() == audits + 1, "verdict did not add exactly one audit entry");
            check!(out.task.overridden == expected_dims, "overridden dims {:?} != {:?}", out.task.overridden, expected_dims);
            let now_hist = snap.annotation_history(&task.article_id).len();
            if expected_dims.is_empty() {
                check!(out.task.status == TaskStatus::Approved && now_hist == history, "approve changed labels");
                check!(**snap.annotation(&task.article_id).unwrap() == *before, "approve changed labels");
            } else {
                overrides += 1;
                check!(now_hist == history + 1, "override superseded {} annotations", now_hist - history);
                check!(*snap.annotation_history(&task.article_id).last().unwrap().as_ref() == *before, "superseded annotation is not the prior one");
                let cur = snap.annotation(&task.article_id).unwrap();
                check!(cur.provenance == Provenance::HumanOverride, "override provenance");
            }
            resolved.insert(task.id.clone(), (at.date_naive(), expected_dims));
        }
    }

    // Whole-store audit completeness.
    let snap = store.snapshot();
    let mut audit_by_article: BTreeMap<&ArticleId, usize> = BTreeMap::new();
    for e in snap.audit_log().filter(|e| e.after.is_some()) {
        *audit_by_article.entry(&e.article_id).or_default() += 1;
    }
    for a in snap.annotations().filter(|a| a.provenance == Provenance::HumanOverride) {
        check!(audit_by_article.get(&a.article_id) == Some(&1), "{} lacks exactly one audit entry", a.article_id);
        check!(snap.annotation_history(&a.article_id).len() == 1, "{} lacks exactly one predecessor", a.article_id);
    }

    // Agreement rates against a recount over the model.
    let days: Vec<NaiveDate> = (1..=5).map(|d| NaiveDate::from_ymd_opt(2024, 9, d).unwrap()).collect();
    for (i, &from) in days.iter().enumerate() {
        for &to in &days[i..] {
            let inside: Vec<&Vec<Dimension>> =
                resolved.values().filter(|(d, _)| from <= *d && *d <= to).map(|(_, dims)| dims).collect();
            let report = agreement_report(&snap, from, to);
            if inside.is_empty() {
                check!(matches!(report, Err(ReviewError::EmptyPeriod)), "empty period not reported");
                continue;
            }
            let report = report.map_err(|e| e.to_string())?;
            check!(report.resolved == inside.len(), "resolved {} != {}", report.resolved, inside.len());
            for r in &report.dimensions {
                let n = inside.iter().filter(|d| d.contains(&r.dimension)).count();
                check!(r.overridden == n, "{:?} overridden {} != {n}", r.dimension, r.overridden);
                check!((r.rate - n as f64 / inside.len() as f64).abs() < 1e-12, "{:?} rate", r.dimension);
            }
        }
    }
    Ok(format!(
        "100 sequences, {} verdicts ({overrides} overrides), {rejected_doubles} double verdicts rejected, 15 report ranges recounted",
        resolved.len()
    ))
}

fn main() {
    if let Ok(dir) = std::env::var(CHILD_DIR) {
        child_main(&dir);
        return;
    }
    // `cargo test -- --list` and similar probes expect no work.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Criterion); 10] = [
        ("aggregation oracle equivalence", aggregation_oracle),
        ("partition laws", partition_laws),
        ("convention-day event ranking", convention_day_events),
        ("clustering determinism and purity", clustering_purity),
        ("rate-limit safety", rate_limit_safety),
        ("pipeline determinism", pipeline_determinism),
        ("ingestion caps and idempotence", ingestion_caps),
        ("durability", durability),
        ("api equivalence and schema", api_equivalence),
        ("review audit", review_audit),
    ];
    let ctx = Ctx::default();
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&ctx))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s] {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    drop(ctx);
    if failed > 0 {
        std::process::exit(1);
    }
}
