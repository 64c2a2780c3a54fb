//! Query-string parsing. Unknown and repeated keys are rejected so that a
//! typo never silently falls back to a default.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use mbd_core::aggregation::{ColorBy, CoverageFilter, Granularity};
use mbd_core::model::default_publisher_ids;
use mbd_core::{ArticleType, NodeId, PublisherId};

use crate::error::ApiError;

pub const COVERAGE_KEYS: &[&str] = &["node", "publishers", "from", "to", "article_types", "color_by", "normalized"];

#[derive(Debug, Default)]
pub struct Params(BTreeMap<String, String>);

impl Params {
    pub fn parse(raw: Option<&str>, allowed: &[&str]) -> Result<Self, ApiError> {
        let mut map = BTreeMap::new();
        for (k, v) in url::form_urlencoded::parse(raw.unwrap_or_default().as_bytes()) {
            if !allowed.contains(&k.as_ref()) {
                return Err(ApiError::bad_param(format!("unknown parameter `{k}`")));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ApiError::bad_param(format!("parameter `{k}` given twice")));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn date(&self, key: &str) -> Result<Option<NaiveDate>, ApiError> {
        self.get(key).map(|v| parse_date(key, v)).transpose()
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>, ApiError> {
        match self.get(key) {
            None => Ok(None),
            Some("true" | "1") => Ok(Some(true)),
            Some("false" | "0") => Ok(Some(false)),
            Some(v) => Err(ApiError::bad_param(format!("`{key}` must be true or false, got `{v}`"))),
        }
    }

    /// Comma-separated values. Present but empty is an error.
    pub fn list(&self, key: &str) -> Result<Option<Vec<String>>, ApiError> {
        let Some(raw) = self.0.get(key) else { return Ok(None) };
        let items: Vec<String> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        if items.is_empty() {
            return Err(ApiError::bad_param(format!("`{key}` is empty")));
        }
        Ok(Some(items))
    }

    pub fn publishers(&self) -> Result<Option<BTreeSet<PublisherId>>, ApiError> {
        let known = default_publisher_ids();
        self.list("publishers")?
            .map(|items| {
                items
                    .into_iter()
                    .map(|s| {
                        let p = PublisherId::new(s);
                        if known.contains(&p) {
                            Ok(p)
                        } else {
                            Err(ApiError::bad_param(format!("unknown publisher `{p}`")))
                        }
                    })
                    .collect()
            })
            .transpose()
    }
}

/// `YYYYMMDD` or `YYYY-MM-DD`.
pub fn parse_date(key: &str, v: &str) -> Result<NaiveDate, ApiError> {
    NaiveDate::parse_from_str(v, "%Y%m%d")
        .or_else(|_| NaiveDate::parse_from_str(v, "%Y-%m-%d"))
        .map_err(|_| ApiError::bad_param(format!("`{key}` must be a date like 20240820, got `{v}`")))
}

pub fn coverage_filter(p: &Params) -> Result<CoverageFilter, ApiError> {
    let mut f = CoverageFilter::default();
    if let Some(n) = p.get("node") {
        f.node = Some(NodeId::new(n));
    }
    if let Some(pubs) = p.publishers()? {
        f.publishers = pubs;
    }
    if let Some(d) = p.date("from")? {
        f.from = d;
    }
    if let Some(d) = p.date("to")? {
        f.to = d;
    }
    if let Some(types) = p.list("article_types")? {
        f.article_types = types
            .iter()
            .map(|t| t.parse::<ArticleType>().map_err(ApiError::bad_param))
            .collect::<Result<_, _>>()?;
    }
    if let Some(c) = p.get("color_by") {
        f.color_by = match c {
            "category" => ColorBy::Category,
            "lean" => ColorBy::Lean,
            "tone" => ColorBy::Tone,
            other => return Err(ApiError::bad_param(format!("unknown color_by `{other}`"))),
        };
    }
    if let Some(n) = p.flag("normalized")? {
        f.normalized = n;
    }
    f.validate()?;
    Ok(f)
}

pub fn granularity(p: &Params) -> Result<Granularity, ApiError> {
    match p.get("granularity") {
        None | Some("article") => Ok(Granularity::Article),
        Some("aggregate") => Ok(Granularity::Aggregate),
        Some(other) => Err(ApiError::bad_param(format!("unknown granularity `{other}`"))),
    }
}

fn color_by_name(c: ColorBy) -> &'static str {
    match c {
        ColorBy::Category => "category",
        ColorBy::Lean => "lean",
        ColorBy::Tone => "tone",
    }
}

/// Inverse of [`coverage_filter`]: a query string that parses back to `f`.
pub fn coverage_query(f: &CoverageFilter) -> String {
    let mut q = url::form_urlencoded::Serializer::new(String::new());
    if let Some(n) = &f.node {
        q.append_pair("node", n.as_str());
    }
    let pubs: Vec<&str> = f.publishers.iter().map(PublisherId::as_str).collect();
    q.append_pair("publishers", &pubs.join(","));
    q.append_pair("from", &f.from.format("%Y%m%d").to_string());
    q.append_pair("to", &f.to.format("%Y%m%d").to_string());
    let types: Vec<&str> = f.article_types.iter().map(|t| t.slug()).collect();
    q.append_pair("article_types", &types.join(","));
    q.append_pair("color_by", color_by_name(f.color_by));
    q.append_pair("normalized", if f.normalized { "true" } else { "false" });
    q.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let f = CoverageFilter {
            node: Some(NodeId::new("politics.election-2024")),
            publishers: [PublisherId::new("ap"), PublisherId::new("fox")].into_iter().collect(),
            from: NaiveDate::from_ymd_opt(2024, 8, 1).unwrap(),
            to: NaiveDate::from_ymd_opt(2024, 8, 31).unwrap(),
            article_types: [ArticleType::Opinion].into_iter().collect(),
            color_by: ColorBy::Tone,
            normalized: true,
        };
        let q = coverage_query(&f);
        let p = Params::parse(Some(&q), COVERAGE_KEYS).unwrap();
        assert_eq!(coverage_filter(&p).unwrap(), f);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |q: &str| Params::parse(Some(q), COVERAGE_KEYS).and_then(|p| coverage_filter(&p)).is_err();
        assert!(bad("nope=1"));
        assert!(bad("from=2024-13-01"));
        assert!(bad("publishers=ap,xyz"));
        assert!(bad("publishers="));
        assert!(bad("color_by=size"));
        assert!(bad("normalized=yes"));
        assert!(bad("from=20240902&to=20240901"));
        assert!(bad("to=1&to=2"));
        assert!(!bad("from=2024-08-01&to=20240801"));
    }
}
