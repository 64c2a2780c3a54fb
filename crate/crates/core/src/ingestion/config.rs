use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{default_publishers, PublisherId, MAX_INTERVAL_RANK};

/// Declarative extraction rules for one publisher. Selectors are CSS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub publisher_id: PublisherId,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Front page URL for live mode. `{interval}` is substituted.
    #[serde(default)]
    pub front_page_url: Option<String>,
    /// Tried in order; links accumulate in document order until the cap.
    pub link_selectors: Vec<String>,
    #[serde(default = "href")]
    pub link_attr: String,
    pub title_selectors: Vec<String>,
    /// Every match becomes one paragraph of the body.
    pub body_selectors: Vec<String>,
    #[serde(default)]
    pub time_selectors: Vec<String>,
    /// Attribute holding the timestamp; element text when absent.
    #[serde(default)]
    pub time_attr: Option<String>,
    /// Subtrees removed from title and body text (ads, bylines, widgets).
    #[serde(default)]
    pub strip_selectors: Vec<String>,
    #[serde(default = "default_cap")]
    pub max_links: u8,
}

fn yes() -> bool {
    true
}

fn href() -> String {
    "href".into()
}

fn default_cap() -> u8 {
    MAX_INTERVAL_RANK
}

impl AdapterConfig {
    /// Rules for the markup produced by the fixture generator.
    pub fn generic(publisher_id: PublisherId) -> Self {
        Self {
            publisher_id,
            enabled: true,
            front_page_url: None,
            link_selectors: vec!["ol.top-stories a.story".into()],
            link_attr: href(),
            title_selectors: vec!["article h1.headline".into(), "h1".into()],
            body_selectors: vec!["article div.article-body > p".into()],
            time_selectors: vec!["article time[datetime]".into()],
            time_attr: Some("datetime".into()),
            strip_selectors: vec![".ad".into(), ".byline".into(), ".related".into()],
            max_links: MAX_INTERVAL_RANK,
        }
    }

    pub fn defaults() -> Vec<Self> {
        default_publishers().into_iter().map(|p| Self::generic(p.id)).collect()
    }

    /// Checks every selector parses and the cap is within 1..=20.
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |msg: String| IngestError::Config(format!("{}: {msg}", self.publisher_id));
        if self.link_selectors.is_empty() || self.title_selectors.is_empty() || self.body_selectors.is_empty() {
            return Err(bad("link, title and body rules are required".into()));
        }
        if self.max_links == 0 || self.max_links > MAX_INTERVAL_RANK {
            return Err(bad(format!("max_links must be 1..={MAX_INTERVAL_RANK}")));
        }
        let all = self
            .link_selectors
            .iter()
            .chain(&self.title_selectors)
            .chain(&self.body_selectors)
            .chain(&self.time_selectors)
            .chain(&self.strip_selectors);
        for s in all {
            scraper::Selector::parse(s).map_err(|e| bad(format!("selector `{s}`: {e}")))?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let cfg: Self = toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("adapter config serializes")
    }
}

/// Loads every `*.toml` in `dir`, sorted by publisher.
pub fn load_adapter_dir(dir: &Path) -> Result<Vec<AdapterConfig>, IngestError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| IngestError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| IngestError::Config(format!("{}: {e}", p.display())))?;
        out.push(AdapterConfig::from_toml(&text)?);
    }
    out.sort_by(|a, b| a.publisher_id.cmp(&b.publisher_id));
    for w in out.windows(2) {
        if w[0].publisher_id == w[1].publisher_id {
            return Err(IngestError::Config(format!("duplicate adapter for {}", w[0].publisher_id)));
        }
    }
    Ok(out)
}
