//! Front-page ingestion: fetch each publisher's ranked stories for an
//! interval, extract text with declarative rules, drop duplicates and commit
//! one batch per publisher.

pub mod canonical;
pub mod config;
pub mod extract;

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::model::{body_hash, Article, ArticleId, PublisherId, MAX_INTERVAL_RANK};
use crate::store::{Record, Snapshot, Store, StoreError};

pub use canonical::{canonicalize_url, default_denylist};
pub use config::{load_adapter_dir, AdapterConfig};
pub use extract::{parse_article, ParsedArticle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("selection rules matched no links")]
    SelectionRuleMismatch,
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("invalid url `{0}`")]
    InvalidUrl(String),
    #[error("invalid interval id `{0}` (expected YYYY-MM-DDTHH)")]
    InvalidInterval(String),
    #[error("adapter config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub const DEFAULT_INTERVAL_HOURS: u32 = 6;

/// Interval identifier `YYYY-MM-DDTHH`, naming the UTC hour the interval starts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntervalId {
    id: String,
    start: DateTime<Utc>,
}

impl IntervalId {
    pub fn parse(s: &str) -> Result<Self, IngestError> {
        let bad = || IngestError::InvalidInterval(s.to_string());
        if s.len() != 13 {
            return Err(bad());
        }
        let start = NaiveDateTime::parse_from_str(&format!("{s}:00"), "%Y-%m-%dT%H:%M")
            .map_err(|_| bad())?
            .and_utc();
        Ok(Self { id: s.to_string(), start })
    }

    /// The interval of length `hours` containing `at`.
    pub fn containing(at: DateTime<Utc>, hours: u32) -> Self {
        let hours = hours.clamp(1, 24);
        let hour = at.hour() - at.hour() % hours;
        let start = at.date_naive().and_hms_opt(hour, 0, 0).expect("valid hour").and_utc();
        Self {
            id: start.format("%Y-%m-%dT%H").to_string(),
            start,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn next(&self, hours: u32) -> Self {
        Self::containing(self.start + Duration::hours(i64::from(hours)), hours)
    }
}

impl TryFrom<String> for IntervalId {
    type Error = IngestError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<IntervalId> for String {
    fn from(i: IntervalId) -> Self {
        i.id
    }
}

impl std::fmt::Display for IntervalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id)
    }
}

/// Bounds concurrent fetches per host and overall.
pub struct FetchLimiter {
    global: Semaphore,
    per_host_limit: usize,
    hosts: parking_lot::Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl FetchLimiter {
    pub fn new(per_host: usize, global: usize) -> Self {
        Self {
            global: Semaphore::new(global.max(1)),
            per_host_limit: per_host.max(1),
            hosts: parking_lot::Mutex::new(HashMap::new()),
        }
    }

    /// Runs `f` holding a host permit and then a global permit.
    pub async fn run<T, F: std::future::Future<Output = T>>(&self, host: &str, f: F) -> T {
        let host_sem = self
            .hosts
            .lock()
            .entry(host.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.per_host_limit)))
            .clone();
        let _h = host_sem.acquire().await.expect("semaphore never closed");
        let _g = self.global.acquire().await.expect("semaphore never closed");
        f.await
    }
}

impl Default for FetchLimiter {
    fn default() -> Self {
        Self::new(2, 16)
    }
}

/// Where pages come from: recorded fixtures or the live web.
#[async_trait]
pub trait PageSource: Send + Sync {
    /// Returns the page URL (used to resolve relative links) and its HTML.
    async fn front_page(&self, cfg: &AdapterConfig, interval: &IntervalId) -> Result<(String, String), IngestError>;

    async fn article(&self, cfg: &AdapterConfig, interval: &IntervalId, url: &str) -> Result<String, IngestError>;
}

/// Reads `<root>/<publisher>/<interval>/frontpage.html` and
/// `<root>/<publisher>/<interval>/articles/<last path segment>.html`.
pub struct FixtureSource {
    pub root: PathBuf,
}

impl FixtureSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn interval_dir(&self, cfg: &AdapterConfig, interval: &IntervalId) -> PathBuf {
        self.root.join(cfg.publisher_id.as_str()).join(interval.as_str())
    }
}

/// File name a fixture article is stored under.
pub fn fixture_article_name(url: &str) -> Option<String> {
    let u = url::Url::parse(url).ok()?;
    let last = u.path_segments()?.rfind(|s| !s.is_empty())?.to_string();
    Some(format!("{last}.html"))
}

async fn read(path: PathBuf) -> Result<String, IngestError> {
    tokio::fs::read_to_string(&path)
        .await
        .map_err(|e| IngestError::SourceUnreachable(format!("{}: {e}", path.display())))
}

#[async_trait]
impl PageSource for FixtureSource {
    async fn front_page(&self, cfg: &AdapterConfig, interval: &IntervalId) -> Result<(String, String), IngestError> {
        let base = cfg
            .front_page_url
            .clone()
            .unwrap_or_else(|| format!("https://{}.example/", cfg.publisher_id));
        let html = read(self.interval_dir(cfg, interval).join("frontpage.html")).await?;
        Ok((base, html))
    }

    async fn article(&self, cfg: &AdapterConfig, interval: &IntervalId, url: &str) -> Result<String, IngestError> {
        let name = fixture_article_name(url).ok_or_else(|| IngestError::InvalidUrl(url.to_string()))?;
        read(self.interval_dir(cfg, interval).join("articles").join(name)).await
    }
}

pub struct HttpSource {
    client: reqwest::Client,
}

impl HttpSource {
    pub fn new() -> Result<Self, IngestError> {
        let client = reqwest::Client::builder()
            .user_agent(concat!("mbd/", env!("CARGO_PKG_VERSION")))
            .timeout(std::time::Duration::from_secs(30))
            .build()
            .map_err(|e| IngestError::Config(e.to_string()))?;
        Ok(Self { client })
    }

    async fn get(&self, url: &str) -> Result<String, IngestError> {
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| IngestError::SourceUnreachable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(IngestError::SourceUnreachable(format!("{url}: status {}", resp.status())));
        }
        resp.text()
            .await
            .map_err(|e| IngestError::SourceUnreachable(format!("{url}: {e}")))
    }
}

#[async_trait]
impl PageSource for HttpSource {
    async fn front_page(&self, cfg: &AdapterConfig, interval: &IntervalId) -> Result<(String, String), IngestError> {
        let url = cfg
            .front_page_url
            .as_ref()
            .ok_or_else(|| IngestError::Config(format!("{}: no front_page_url for live mode", cfg.publisher_id)))?
            .replace("{interval}", interval.as_str());
        let html = self.get(&url).await?;
        Ok((url, html))
    }

    async fn article(&self, _cfg: &AdapterConfig, _interval: &IntervalId, url: &str) -> Result<String, IngestError> {
        self.get(url).await
    }
}

fn host_of(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_string))
        .unwrap_or_default()
}

/// A front-page link with its rank and fetch outcome.
#[derive(Debug, Clone)]
pub struct FetchedLink {
    pub rank: u8,
    pub url: String,
    pub document: Result<String, IngestError>,
}

/// Fetches the front page and up to `max_links` ranked article documents.
/// Ranks follow front-page order after canonicalization and de-duplication.
pub async fn fetch_top_articles(
    cfg: &AdapterConfig,
    source: &dyn PageSource,
    interval: &IntervalId,
    limiter: &FetchLimiter,
    denylist: &[String],
) -> Result<Vec<FetchedLink>, IngestError> {
    let front_host = cfg
        .front_page_url
        .as_deref()
        .map(host_of)
        .unwrap_or_else(|| cfg.publisher_id.to_string());
    let (base, html) = limiter.run(&front_host, source.front_page(cfg, interval)).await?;
    let base = url::Url::parse(&base).ok();
    let mut links: Vec<String> = Vec::new();
    for href in extract::extract_links(&html, cfg) {
        let absolute = match &base {
            Some(b) => b.join(&href).map(|u| u.to_string()).unwrap_or(href),
            None => href,
        };
        let Ok(canon) = canonicalize_url(&absolute, denylist) else { continue };
        if !links.contains(&canon) {
            links.push(canon);
        }
        if links.len() >= usize::from(cfg.max_links.min(MAX_INTERVAL_RANK)) {
            break;
        }
    }
    if links.is_empty() {
        return Err(IngestError::SelectionRuleMismatch);
    }
    let fetches = links.into_iter().enumerate().map(|(i, url)| async move {
        let host = host_of(&url);
        let document = limiter.run(&host, source.article(cfg, interval, &url)).await;
        FetchedLink {
            rank: i as u8 + 1,
            url,
            document,
        }
    });
    Ok(join_all(fetches).await)
}

#[derive(Debug, Clone, Default)]
pub struct Dedup {
    pub new: Vec<Article>,
    pub duplicates: Vec<Article>,
}

/// An article is a duplicate when its canonical URL or body hash is already
/// stored, or appeared earlier in the same batch.
pub fn deduplicate(batch: Vec<Article>, snapshot: &Snapshot) -> Dedup {
    let mut urls = BTreeSet::new();
    let mut hashes = BTreeSet::new();
    let mut out = Dedup::default();
    for a in batch {
        let dup = snapshot.has_url(&a.url)
            || snapshot.has_body_hash(&a.body_hash)
            || urls.contains(&a.url)
            || hashes.contains(&a.body_hash);
        if dup {
            out.duplicates.push(a);
        } else {
            urls.insert(a.url.clone());
            hashes.insert(a.body_hash.clone());
            out.new.push(a);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublisherReport {
    pub publisher_id: PublisherId,
    pub fetched: u32,
    pub new: u32,
    pub duplicate: u32,
    pub failure: u32,
    pub errors: Vec<String>,
}

impl PublisherReport {
    pub fn new(publisher_id: PublisherId) -> Self {
        Self {
            publisher_id,
            fetched: 0,
            new: 0,
            duplicate: 0,
            failure: 0,
            errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub interval_id: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub publishers: Vec<PublisherReport>,
}

impl IngestReport {
    pub fn total_new(&self) -> u32 {
        self.publishers.iter().map(|p| p.new).sum()
    }

    pub fn total_duplicate(&self) -> u32 {
        self.publishers.iter().map(|p| p.duplicate).sum()
    }

    pub fn total_failure(&self) -> u32 {
        self.publishers.iter().map(|p| p.failure).sum()
    }

    pub fn failed_publishers(&self) -> usize {
        self.publishers.iter().filter(|p| p.failure > 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Use this instant for collection and report timestamps.
    Fixed(DateTime<Utc>),
    /// Fixture runs: collection time is the interval start.
    IntervalStart,
    System,
}

pub struct CycleOptions {
    pub clock: Clock,
    pub denylist: Vec<String>,
    pub limiter: FetchLimiter,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            clock: Clock::IntervalStart,
            denylist: default_denylist(),
            limiter: FetchLimiter::default(),
        }
    }
}

impl CycleOptions {
    fn now(&self, interval: &IntervalId) -> DateTime<Utc> {
        match self.clock {
            Clock::Fixed(t) => t,
            Clock::IntervalStart => interval.start(),
            Clock::System => Utc::now(),
        }
    }
}

struct Prepared {
    report: PublisherReport,
    articles: Vec<Article>,
}

async fn prepare_publisher(
    cfg: &AdapterConfig,
    source: &dyn PageSource,
    interval: &IntervalId,
    options: &CycleOptions,
    collected_at: DateTime<Utc>,
) -> Prepared {
    let mut report = PublisherReport::new(cfg.publisher_id.clone());
    let links = match fetch_top_articles(cfg, source, interval, &options.limiter, &options.denylist).await {
        Ok(l) => l,
        Err(e) => {
            report.fetched = 1;
            report.failure = 1;
            report.errors.push(e.to_string());
            return Prepared {
                report,
                articles: Vec::new(),
            };
        }
    };
    let mut articles = Vec::new();
    for link in links {
        report.fetched += 1;
        let parsed = link.document.and_then(|html| parse_article(&html, cfg, collected_at));
        match parsed {
            Ok(p) => {
                let hash = body_hash(&p.body);
                articles.push(Article {
                    id: ArticleId::derive(&link.url, &hash),
                    publisher_id: cfg.publisher_id.clone(),
                    url: link.url,
                    title: p.title,
                    body: p.body,
                    published_at: p.published_at,
                    collected_at,
                    interval_rank: link.rank,
                    interval_id: interval.to_string(),
                    body_hash: hash,
                    published_at_fallback: p.published_at_fallback,
                });
            }
            Err(e) => {
                report.failure += 1;
                report.errors.push(format!("{}: {e}", link.url));
            }
        }
    }
    Prepared { report, articles }
}

/// Runs one ingestion cycle. Publishers are fetched concurrently and a
/// failing adapter never blocks the others; new articles commit in one
/// batch per publisher.
pub async fn run_ingestion_cycle(
    configs: &[AdapterConfig],
    source: &dyn PageSource,
    interval: &IntervalId,
    store: &Store,
    options: &CycleOptions,
) -> Result<IngestReport, IngestError> {
    store.check_writable()?;
    let started_at = options.now(interval);
    let collected_at = started_at;
    let enabled: Vec<&AdapterConfig> = configs.iter().filter(|c| c.enabled).collect();
    let prepared = join_all(
        enabled
            .iter()
            .map(|cfg| prepare_publisher(cfg, source, interval, options, collected_at)),
    )
    .await;

    let mut reports = Vec::with_capacity(prepared.len());
    for Prepared { mut report, articles } in prepared {
        let mut tally = (0usize, 0usize, 0usize);
        let result = store.commit_with(|snap| {
            let dedup = deduplicate(articles.clone(), snap);
            let room = u32::from(MAX_INTERVAL_RANK)
                .saturating_sub(snap.interval_count(&report.publisher_id, interval.as_str())) as usize;
            let fits = dedup.new.len().min(room);
            tally = (fits, dedup.duplicates.len(), dedup.new.len() - fits);
            Ok::<_, StoreError>(dedup.new.into_iter().take(fits).map(Record::Article).collect())
        });
        match result {
            Ok(_) => {
                let (new, dup, over) = tally;
                report.new += new as u32;
                report.duplicate += dup as u32;
                if over > 0 {
                    report.failure += over as u32;
                    report.errors.push(format!("{over} articles over the per-interval cap"));
                }
            }
            Err(StoreError::StoreUnavailable(msg)) => return Err(StoreError::StoreUnavailable(msg).into()),
            Err(e) => {
                report.failure += articles.len() as u32;
                report.errors.push(e.to_string());
            }
        }
        tracing::info!(
            publisher = %report.publisher_id,
            fetched = report.fetched,
            new = report.new,
            duplicate = report.duplicate,
            failure = report.failure,
            "ingested"
        );
        reports.push(report);
    }
    reports.sort_by(|a, b| a.publisher_id.cmp(&b.publisher_id));
    let finished_at = match options.clock {
        Clock::System => Utc::now(),
        _ => started_at,
    };
    Ok(IngestReport {
        interval_id: interval.to_string(),
        started_at,
        finished_at,
        publishers: reports,
    })
}
