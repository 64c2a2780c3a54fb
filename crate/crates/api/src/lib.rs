//! HTTP interface under `/api/v1`. Read endpoints are public and take one
//! store snapshot per request; review endpoints need the bearer token.

pub mod docs;
pub mod error;
pub mod params;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use mbd_core::aggregation::{self, export_csv, ColorBy};
use mbd_core::events::{coverage_matrix, events_in_range, Event};
use mbd_core::model::default_publisher_ids;
use mbd_core::review::{record_verdict, ReviewWeek};
use mbd_core::{Snapshot, Store};
use tower_http::services::ServeDir;

use docs::*;
pub use error::{ApiError, ErrorDoc, ERROR_CODES};
use params::{coverage_filter, granularity, Params, COVERAGE_KEYS};

/// Days covered by the events view when no range is given, ending today.
pub const DEFAULT_EVENT_DAYS: i64 = 3;

#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    /// Bearer token for review endpoints. `None` disables them.
    pub review_token: Option<String>,
    /// "Today" for default date ranges; the system date when unset.
    pub as_of: Option<NaiveDate>,
    /// Verdict timestamp override, for reproducible runs.
    pub fixed_now: Option<DateTime<Utc>>,
    /// Built dashboard assets, served for paths outside the API.
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    config: Arc<ApiConfig>,
}

impl AppState {
    pub fn new(store: Arc<Store>, config: ApiConfig) -> Self {
        Self {
            store,
            config: Arc::new(config),
        }
    }

    fn snapshot(&self) -> Snapshot {
        self.store.snapshot()
    }

    fn today(&self) -> NaiveDate {
        self.config.as_of.unwrap_or_else(|| Utc::now().date_naive())
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/v1/taxonomy", get(taxonomy))
        .route("/api/v1/coverage", get(coverage))
        .route("/api/v1/coverage/grid", get(grid))
        .route("/api/v1/events", get(events))
        .route("/api/v1/events/{id}", get(event_detail))
        .route("/api/v1/events/{id}/facts/{fact_id}", get(fact_detail))
        .route("/api/v1/export.csv", get(export))
        .route("/api/v1/review/tasks", get(review_tasks))
        .route("/api/v1/review/verdicts", post(verdict))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new("not_found", "no such route") }),
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn healthz(State(s): State<AppState>) -> Json<HealthDoc> {
    Json(HealthDoc {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        store_sequence: s.store.sequence(),
    })
}

async fn taxonomy(State(s): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<TaxonomyDoc> {
    let p = Params::parse(q.as_deref(), &["version"])?;
    let snap = s.snapshot();
    let tax = match p.get("version") {
        None => snap.latest_taxonomy(),
        Some(v) => {
            let v: u32 = v
                .parse()
                .map_err(|_| ApiError::bad_param(format!("`version` must be a number, got `{v}`")))?;
            snap.taxonomy(v)
        }
    }
    .ok_or_else(|| ApiError::new("unknown_version", "no such taxonomy version"))?;
    Ok(Json(TaxonomyDoc::from(tax.as_ref())))
}

async fn coverage(State(s): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<aggregation::CoverageSlice> {
    let filter = coverage_filter(&Params::parse(q.as_deref(), COVERAGE_KEYS)?)?;
    Ok(Json(aggregation::coverage(&s.snapshot(), &filter)?))
}

async fn grid(State(s): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<GridDoc> {
    let filter = coverage_filter(&Params::parse(q.as_deref(), COVERAGE_KEYS)?)?;
    let snap = s.snapshot();
    let grid = aggregation::grid_summary(&snap, &filter)?;
    let means = match filter.color_by {
        ColorBy::Category => None,
        c => Some(aggregation::mean_label(&snap, &filter, c.dimension().expect("scale color"))?),
    };
    Ok(Json(GridDoc { grid, means }))
}

async fn events(State(s): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<EventsDoc> {
    let p = Params::parse(q.as_deref(), &["from", "to", "publishers"])?;
    let to = p.date("to")?.unwrap_or_else(|| s.today());
    let from = p.date("from")?.unwrap_or(to - Duration::days(DEFAULT_EVENT_DAYS - 1));
    if from > to {
        return Err(ApiError::bad_param(format!("from {from} is after to {to}")));
    }
    let publishers: Vec<_> = match p.publishers()? {
        Some(set) => set.into_iter().collect(),
        None => default_publisher_ids(),
    };
    let list = events_in_range(&s.snapshot(), from, to);
    let matrix = coverage_matrix(&list, &publishers);
    let rows = list
        .iter()
        .zip(matrix.rows)
        .map(|(e, r)| EventRow {
            id: e.id.clone(),
            window_date: e.window_date,
            short_title: e.short_title.clone(),
            importance: e.importance,
            first_published_at: e.first_published_at,
            cells: r.cells,
        })
        .collect();
    Ok(Json(EventsDoc {
        from,
        to,
        publishers,
        events: rows,
    }))
}

/// Event ids carry their window date (`ev-YYYYMMDD-…`); fall back to a scan.
fn find_event(snap: &Snapshot, id: &str) -> Option<Event> {
    let by_date = id
        .strip_prefix("ev-")
        .and_then(|r| r.get(..8))
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y%m%d").ok())
        .and_then(|d| snap.event_window(d))
        .and_then(|w| w.events.iter().find(|e| e.id == id).cloned());
    by_date.or_else(|| {
        snap.event_windows()
            .flat_map(|w| w.events.iter())
            .find(|e| e.id == id)
            .cloned()
    })
}

async fn event_detail(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<EventDoc> {
    let snap = s.snapshot();
    let event = find_event(&snap, &id).ok_or_else(|| ApiError::new("unknown_event", format!("no event `{id}`")))?;
    let articles = event
        .article_ids
        .iter()
        .filter_map(|a| snap.article(a))
        .map(|a| ArticleRef {
            id: a.id.clone(),
            publisher_id: a.publisher_id.clone(),
            url: a.url.clone(),
            title: a.title.clone(),
        })
        .collect();
    Ok(Json(EventDoc { event, articles }))
}

async fn fact_detail(State(s): State<AppState>, Path((id, fact_id)): Path<(String, String)>) -> ApiResult<FactDoc> {
    let snap = s.snapshot();
    let event = find_event(&snap, &id).ok_or_else(|| ApiError::new("unknown_event", format!("no event `{id}`")))?;
    let fact = event
        .fact(&fact_id)
        .cloned()
        .ok_or_else(|| ApiError::new("unknown_fact", format!("no fact `{fact_id}` in `{id}`")))?;
    let variations = fact
        .variations
        .iter()
        .map(|v| VariationDoc {
            variation: v.clone(),
            url: snap.article(&v.article_id).map(|a| a.url.clone()).unwrap_or_default(),
        })
        .collect();
    Ok(Json(FactDoc { fact, variations }))
}

async fn export(State(s): State<AppState>, RawQuery(q): RawQuery) -> Result<Response, ApiError> {
    let mut keys = COVERAGE_KEYS.to_vec();
    keys.push("granularity");
    let p = Params::parse(q.as_deref(), &keys)?;
    let filter = coverage_filter(&p)?;
    let text = export_csv(&s.snapshot(), &filter, granularity(&p)?)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"coverage.csv\""),
        ],
        text,
    )
        .into_response())
}

fn authorize(s: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(token) = s.config.review_token.as_deref() else {
        return Err(ApiError::new("review_disabled", "no review token configured"));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token) {
        Ok(())
    } else {
        Err(ApiError::new("unauthorized", "missing or wrong bearer token"))
    }
}

async fn review_tasks(State(s): State<AppState>, headers: HeaderMap, RawQuery(q): RawQuery) -> ApiResult<TasksDoc> {
    authorize(&s, &headers)?;
    let p = Params::parse(q.as_deref(), &["week"])?;
    let week = p.get("week").map(str::parse::<ReviewWeek>).transpose()?.map(|w| w.to_string());
    let snap = s.snapshot();
    let tasks = snap
        .review_tasks()
        .filter(|t| week.as_ref().is_none_or(|w| &t.assigned_week == w))
        .map(|t| (**t).clone())
        .collect();
    Ok(Json(TasksDoc { week, tasks }))
}

async fn verdict(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    authorize(&s, &headers)?;
    let req: VerdictRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::new("invalid_body", e.to_string()))?;
    if req.reviewer_id.trim().is_empty() {
        return Err(ApiError::new("invalid_body", "reviewer_id is empty"));
    }
    let at = s.config.fixed_now.unwrap_or_else(Utc::now);
    let store = s.store.clone();
    let outcome = tokio::task::spawn_blocking(move || record_verdict(&store, &req.task_id, &req.verdict, &req.reviewer_id, at))
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))??;
    Ok(Json(outcome).into_response())
}
