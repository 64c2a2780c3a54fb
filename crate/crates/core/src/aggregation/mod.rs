//! Faceted coverage queries over a store snapshot.
//!
//! Every query selects annotated articles by publisher, `published_at` date
//! range, taxonomy subtree and article type, then buckets them either by the
//! child nodes of the filter node or by a five-point scale label.

mod csv_export;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    default_publisher_ids, Annotation, ArticleType, NodeId, OrdinalScale, PublisherId, ScaleDimension,
};
use crate::store::{ArticleRecord, Selector, Snapshot, StoreError};
use crate::taxonomy::Level;

pub use csv_export::{export_csv, Granularity, ARTICLE_COLUMNS, AGGREGATE_COLUMNS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("unknown taxonomy node `{0}`")]
    UnknownNode(NodeId),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorBy {
    #[default]
    Category,
    Lean,
    Tone,
}

impl ColorBy {
    pub fn dimension(self) -> Option<ScaleDimension> {
        match self {
            Self::Category => None,
            Self::Lean => Some(ScaleDimension::Lean),
            Self::Tone => Some(ScaleDimension::Tone),
        }
    }
}

pub fn default_from() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date")
}

pub fn default_to() -> NaiveDate {
    NaiveDate::from_ymd_opt(9999, 12, 31).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageFilter {
    /// `None` is the root: segments are categories.
    pub node: Option<NodeId>,
    pub publishers: BTreeSet<PublisherId>,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub article_types: BTreeSet<ArticleType>,
    pub color_by: ColorBy,
    pub normalized: bool,
}

impl Default for CoverageFilter {
    fn default() -> Self {
        Self {
            node: None,
            publishers: default_publisher_ids().into_iter().collect(),
            from: default_from(),
            to: default_to(),
            article_types: ArticleType::ALL.into_iter().collect(),
            color_by: ColorBy::Category,
            normalized: false,
        }
    }
}

impl CoverageFilter {
    pub fn validate(&self) -> Result<(), AggregationError> {
        if self.from > self.to {
            return Err(AggregationError::InvalidFilter(format!("from {} is after to {}", self.from, self.to)));
        }
        if self.publishers.is_empty() {
            return Err(AggregationError::InvalidFilter("no publishers selected".into()));
        }
        if self.article_types.is_empty() {
            return Err(AggregationError::InvalidFilter("no article types selected".into()));
        }
        Ok(())
    }

    fn selector(&self) -> Selector {
        Selector {
            publishers: Some(self.publishers.clone()),
            date_range: Some((self.from, self.to)),
            node: self.node.clone(),
            article_types: Some(self.article_types.clone()),
            ..Selector::annotated()
        }
    }
}

/// Level of `node` in the newest taxonomy version that knows it.
pub fn node_level(snapshot: &Snapshot, node: &NodeId) -> Result<Level, AggregationError> {
    let mut versions: Vec<_> = snapshot.taxonomies().collect();
    versions.reverse();
    versions
        .into_iter()
        .find_map(|t| t.node(node).map(|n| n.level))
        .ok_or_else(|| AggregationError::UnknownNode(node.clone()))
}

/// The segment an annotation falls into below `node`, assuming it already
/// lies within `node`'s subtree.
pub fn child_key(annotation: &Annotation, level: Option<Level>) -> &NodeId {
    match level {
        None => &annotation.category_id,
        Some(Level::Category) => &annotation.topic_id,
        Some(Level::Topic) | Some(Level::Subtopic) => &annotation.subtopic_id,
    }
}

/// Segment keys for the filter node: its children in the latest taxonomy
/// followed by any further keys present in `seen`, sorted.
fn child_keys(snapshot: &Snapshot, node: Option<&NodeId>, level: Option<Level>, seen: &BTreeSet<String>) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    if let Some(t) = snapshot.latest_taxonomy() {
        match (node, level) {
            (None, _) => keys.extend(t.categories().map(|n| n.id.0.clone())),
            (Some(n), Some(Level::Subtopic)) => keys.push(n.0.clone()),
            (Some(n), _) => keys.extend(t.children(n).map(|c| c.id.0.clone())),
        }
    }
    if let (Some(n), Some(Level::Subtopic)) = (node, level) {
        if keys.is_empty() {
            keys.push(n.0.clone());
        }
    }
    for k in seen {
        if !keys.contains(k) {
            keys.push(k.clone());
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub key: String,
    pub count: u64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherSlice {
    pub publisher_id: PublisherId,
    pub total: u64,
    /// Set by [`normalize`] when the publisher has no matching articles.
    pub empty: bool,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSlice {
    pub node: Option<NodeId>,
    pub color_by: ColorBy,
    pub normalized: bool,
    pub keys: Vec<String>,
    pub publishers: Vec<PublisherSlice>,
}

fn matching(snapshot: &Snapshot, filter: &CoverageFilter) -> Result<(Option<Level>, Vec<ArticleRecord>), AggregationError> {
    filter.validate()?;
    let level = filter.node.as_ref().map(|n| node_level(snapshot, n)).transpose()?;
    let records = snapshot.query(&filter.selector())?.collect();
    Ok((level, records))
}

fn build_slice(
    filter: &CoverageFilter,
    color_by: ColorBy,
    keys: Vec<String>,
    counts: &BTreeMap<(PublisherId, String), u64>,
) -> CoverageSlice {
    let publishers = filter
        .publishers
        .iter()
        .map(|p| {
            let segments: Vec<Segment> = keys
                .iter()
                .map(|k| Segment {
                    key: k.clone(),
                    count: counts.get(&(p.clone(), k.clone())).copied().unwrap_or(0),
                    proportion: 0.0,
                })
                .collect();
            PublisherSlice {
                publisher_id: p.clone(),
                total: segments.iter().map(|s| s.count).sum(),
                empty: false,
                segments,
            }
        })
        .collect();
    CoverageSlice {
        node: filter.node.clone(),
        color_by,
        normalized: false,
        keys,
        publishers,
    }
}

/// Article counts per publisher for each child of `filter.node`.
pub fn coverage_counts(snapshot: &Snapshot, filter: &CoverageFilter) -> Result<CoverageSlice, AggregationError> {
    let (level, records) = matching(snapshot, filter)?;
    let mut counts: BTreeMap<(PublisherId, String), u64> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in &records {
        let a = r.annotation.as_ref().expect("annotated selector");
        let key = child_key(a, level).0.clone();
        seen.insert(key.clone());
        *counts.entry((r.article.publisher_id.clone(), key)).or_insert(0) += 1;
    }
    let keys = child_keys(snapshot, filter.node.as_ref(), level, &seen);
    Ok(build_slice(filter, ColorBy::Category, keys, &counts))
}

fn scale_label(a: &Annotation, dim: ScaleDimension) -> &'static str {
    match dim {
        ScaleDimension::Lean => a.lean.label(),
        ScaleDimension::Tone => a.tone.label(),
    }
}

fn scale_value(a: &Annotation, dim: ScaleDimension) -> i8 {
    match dim {
        ScaleDimension::Lean => a.lean.to_numeric(),
        ScaleDimension::Tone => a.tone.to_numeric(),
    }
}

/// Counts per publisher in each of the five scale buckets.
pub fn label_distribution(
    snapshot: &Snapshot,
    filter: &CoverageFilter,
    dim: ScaleDimension,
) -> Result<CoverageSlice, AggregationError> {
    let (_, records) = matching(snapshot, filter)?;
    let mut counts: BTreeMap<(PublisherId, String), u64> = BTreeMap::new();
    for r in &records {
        let a = r.annotation.as_ref().expect("annotated selector");
        *counts
            .entry((r.article.publisher_id.clone(), scale_label(a, dim).to_string()))
            .or_insert(0) += 1;
    }
    let keys = dim.labels().map(str::to_string).to_vec();
    let color_by = match dim {
        ScaleDimension::Lean => ColorBy::Lean,
        ScaleDimension::Tone => ColorBy::Tone,
    };
    Ok(build_slice(filter, color_by, keys, &counts))
}

/// Fills proportions; a publisher with no articles gets zeros and `empty`.
pub fn normalize(mut slice: CoverageSlice) -> CoverageSlice {
    for p in &mut slice.publishers {
        p.total = p.segments.iter().map(|s| s.count).sum();
        p.empty = p.total == 0;
        for s in &mut p.segments {
            s.proportion = if p.empty { 0.0 } else { s.count as f64 / p.total as f64 };
        }
    }
    slice.normalized = true;
    slice
}

/// Dispatches on `filter.color_by` and normalizes.
pub fn coverage(snapshot: &Snapshot, filter: &CoverageFilter) -> Result<CoverageSlice, AggregationError> {
    let slice = match filter.color_by.dimension() {
        None => coverage_counts(snapshot, filter)?,
        Some(dim) => label_distribution(snapshot, filter, dim)?,
    };
    let mut slice = normalize(slice);
    slice.normalized = filter.normalized;
    Ok(slice)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub dimension: ScaleDimension,
    pub keys: Vec<String>,
    pub publishers: Vec<PublisherId>,
    /// `means[publisher][key]`; `None` for cells without articles.
    pub means: Vec<Vec<Option<f64>>>,
}

impl MeanTable {
    pub fn get(&self, publisher: &PublisherId, key: &str) -> Option<f64> {
        let p = self.publishers.iter().position(|x| x == publisher)?;
        let k = self.keys.iter().position(|x| x == key)?;
        self.means[p][k]
    }
}

/// Mean numeric scale value per (publisher, child node).
pub fn mean_label(snapshot: &Snapshot, filter: &CoverageFilter, dim: ScaleDimension) -> Result<MeanTable, AggregationError> {
    let (level, records) = matching(snapshot, filter)?;
    let mut sums: BTreeMap<(PublisherId, String), (i64, u64)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in &records {
        let a = r.annotation.as_ref().expect("annotated selector");
        let key = child_key(a, level).0.clone();
        seen.insert(key.clone());
        let cell = sums.entry((r.article.publisher_id.clone(), key)).or_insert((0, 0));
        cell.0 += i64::from(scale_value(a, dim));
        cell.1 += 1;
    }
    let keys = child_keys(snapshot, filter.node.as_ref(), level, &seen);
    let publishers: Vec<PublisherId> = filter.publishers.iter().cloned().collect();
    let means = publishers
        .iter()
        .map(|p| {
            keys.iter()
                .map(|k| {
                    sums.get(&(p.clone(), k.clone()))
                        .map(|&(s, n)| s as f64 / n as f64)
                })
                .collect()
        })
        .collect();
    Ok(MeanTable {
        dimension: dim,
        keys,
        publishers,
        means,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub publisher_id: PublisherId,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRow {
    pub key: String,
    /// Aligned with [`Grid::publishers`].
    pub counts: Vec<u64>,
    /// Highest-count publisher, earliest slug on ties; `None` for an all-zero row.
    pub marker: Option<Marker>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub node: Option<NodeId>,
    pub publishers: Vec<PublisherId>,
    pub rows: Vec<GridRow>,
}

pub fn grid_summary(snapshot: &Snapshot, filter: &CoverageFilter) -> Result<Grid, AggregationError> {
    let slice = coverage_counts(snapshot, filter)?;
    let publishers: Vec<PublisherId> = slice.publishers.iter().map(|p| p.publisher_id.clone()).collect();
    let rows = slice
        .keys
        .iter()
        .enumerate()
        .map(|(k, key)| {
            let counts: Vec<u64> = slice.publishers.iter().map(|p| p.segments[k].count).collect();
            // Publishers are in slug order, so the first maximum wins ties.
            let mut marker: Option<Marker> = None;
            for (p, &c) in publishers.iter().zip(&counts) {
                if c > 0 && marker.as_ref().is_none_or(|m| c > m.count) {
                    marker = Some(Marker {
                        publisher_id: p.clone(),
                        count: c,
                    });
                }
            }
            GridRow {
                key: key.clone(),
                counts,
                marker,
            }
        })
        .collect();
    Ok(Grid {
        node: filter.node.clone(),
        publishers,
        rows,
    })
}
