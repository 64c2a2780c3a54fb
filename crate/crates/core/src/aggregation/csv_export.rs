use serde::{Deserialize, Serialize};

use super::{coverage, AggregationError, CoverageFilter};
use crate::model::OrdinalScale;
use crate::store::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Article,
    Aggregate,
}

pub const ARTICLE_COLUMNS: [&str; 19] = [
    "article_id",
    "publisher_id",
    "url",
    "title",
    "published_at",
    "interval_id",
    "interval_rank",
    "taxonomy_version",
    "category_id",
    "topic_id",
    "subtopic_id",
    "article_type",
    "tone",
    "tone_value",
    "lean",
    "lean_value",
    "provenance",
    "model_id",
    "prompt_version",
];

pub const AGGREGATE_COLUMNS: [&str; 6] = ["publisher_id", "color_by", "key", "count", "total", "proportion"];

fn csv_err(e: impl std::fmt::Display) -> AggregationError {
    AggregationError::InvalidFilter(format!("csv: {e}"))
}

/// CSV with a header row always present. Article rows are in article-id
/// order; aggregate rows are one per (publisher, key) in slice order.
pub fn export_csv(snapshot: &Snapshot, filter: &CoverageFilter, granularity: Granularity) -> Result<String, AggregationError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match granularity {
        Granularity::Article => {
            let (_, records) = super::matching(snapshot, filter)?;
            w.write_record(ARTICLE_COLUMNS).map_err(csv_err)?;
            for r in records {
                let a = &r.article;
                let n = r.annotation.as_ref().expect("annotated selector");
                w.write_record([
                    a.id.as_str(),
                    a.publisher_id.as_str(),
                    &a.url,
                    &a.title,
                    &a.published_at.to_rfc3339(),
                    &a.interval_id,
                    &a.interval_rank.to_string(),
                    &n.taxonomy_version.to_string(),
                    n.category_id.as_str(),
                    n.topic_id.as_str(),
                    n.subtopic_id.as_str(),
                    n.article_type.slug(),
                    n.tone.label(),
                    &n.tone.to_numeric().to_string(),
                    n.lean.label(),
                    &n.lean.to_numeric().to_string(),
                    match n.provenance {
                        crate::model::Provenance::Llm => "llm",
                        crate::model::Provenance::HumanOverride => "human_override",
                    },
                    &n.model_id,
                    &n.prompt_version,
                ])
                .map_err(csv_err)?;
            }
        }
        Granularity::Aggregate => {
            let slice = coverage(snapshot, filter)?;
            let color_by = serde_json::to_value(slice.color_by)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            w.write_record(AGGREGATE_COLUMNS).map_err(csv_err)?;
            for p in &slice.publishers {
                for s in &p.segments {
                    w.write_record([
                        p.publisher_id.as_str(),
                        &color_by,
                        &s.key,
                        &s.count.to_string(),
                        &p.total.to_string(),
                        &s.proportion.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
