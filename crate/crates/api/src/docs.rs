//! Response bodies. Module outputs are embedded unchanged so a client can
//! deserialize straight into the core types.

use chrono::{DateTime, NaiveDate, Utc};
use mbd_core::aggregation::{Grid, MeanTable};
use mbd_core::events::{Event, FactVariation, TopFact};
use mbd_core::review::ReviewTask;
use mbd_core::{ArticleId, NodeId, PublisherId, Taxonomy, TaxonomyNode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthDoc {
    pub status: String,
    pub version: String,
    pub store_sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDoc {
    pub version: u32,
    pub nodes: Vec<TaxonomyNode>,
    pub tombstones: Vec<NodeId>,
}

impl From<&Taxonomy> for TaxonomyDoc {
    fn from(t: &Taxonomy) -> Self {
        Self {
            version: t.version(),
            nodes: t.nodes().to_vec(),
            tombstones: t.tombstones().to_vec(),
        }
    }
}

/// Grid summary plus per-cell means when coloring by a scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub grid: Grid,
    pub means: Option<MeanTable>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub id: String,
    pub window_date: NaiveDate,
    pub short_title: String,
    pub importance: u32,
    pub first_published_at: DateTime<Utc>,
    /// One cell per entry of [`EventsDoc::publishers`].
    pub cells: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventsDoc {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub publishers: Vec<PublisherId>,
    pub events: Vec<EventRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRef {
    pub id: ArticleId,
    pub publisher_id: PublisherId,
    pub url: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDoc {
    pub event: Event,
    /// Members in event order.
    pub articles: Vec<ArticleRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariationDoc {
    pub variation: FactVariation,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactDoc {
    pub fact: TopFact,
    pub variations: Vec<VariationDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TasksDoc {
    pub week: Option<String>,
    pub tasks: Vec<ReviewTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub task_id: String,
    pub reviewer_id: String,
    pub verdict: mbd_core::review::Verdict,
}
