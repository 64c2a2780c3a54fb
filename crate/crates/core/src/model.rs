//! Domain types shared by every pipeline stage.
//!
//! Label scales are ordinal with a fixed integer mapping in `[-2, 2]`. For
//! political lean the sign convention is Democrat = -2 ... Republican = +2;
//! displays always use the label text, so the sign is internal only.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Short stable publisher slug, e.g. `nyt`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublisherId(pub String);

impl PublisherId {
    pub fn new(slug: impl Into<String>) -> Self {
        Self(slug.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PublisherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Content-addressed article identifier (hex digest prefix).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArticleId(pub String);

impl ArticleId {
    /// Derives the id from the canonical URL and the normalized body digest.
    pub fn derive(canonical_url: &str, body_hash: &str) -> Self {
        let mut h = Sha256::new();
        h.update(canonical_url.as_bytes());
        h.update([0u8]);
        h.update(body_hash.as_bytes());
        Self(hex::encode(&h.finalize()[..10]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Taxonomy node slug. Stable across taxonomy versions; renames mint new ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(slug: impl Into<String>) -> Self {
        Self(slug.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Publisher {
    pub id: PublisherId,
    pub display_name: String,
    pub enabled: bool,
}

const DEFAULT_PUBLISHERS: [(&str, &str); 10] = [
    ("ap", "Associated Press News"),
    ("breitbart", "Breitbart News"),
    ("cnn", "CNN"),
    ("fox", "Fox News"),
    ("guardian", "The Guardian"),
    ("huffpost", "The Huffington Post"),
    ("nyt", "The New York Times"),
    ("usatoday", "USA Today"),
    ("wsj", "The Wall Street Journal"),
    ("wapo", "The Washington Post"),
];

/// The ten tracked publishers, sorted by slug.
pub fn default_publishers() -> Vec<Publisher> {
    let mut out: Vec<Publisher> = DEFAULT_PUBLISHERS
        .iter()
        .map(|(slug, name)| Publisher {
            id: PublisherId::new(*slug),
            display_name: (*name).to_string(),
            enabled: true,
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Slugs of [`default_publishers`], sorted.
pub fn default_publisher_ids() -> Vec<PublisherId> {
    default_publishers().into_iter().map(|p| p.id).collect()
}

/// Hex SHA-256 of the whitespace-normalized body.
pub fn body_hash(body: &str) -> String {
    let normalized = normalize_whitespace(body);
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: ArticleId,
    pub publisher_id: PublisherId,
    pub url: String,
    pub title: String,
    pub body: String,
    pub published_at: DateTime<Utc>,
    pub collected_at: DateTime<Utc>,
    /// Position among the interval's top stories, 1..=20.
    pub interval_rank: u8,
    pub interval_id: String,
    pub body_hash: String,
    /// Set when the page carried no usable timestamp and `published_at`
    /// fell back to `collected_at`.
    #[serde(default)]
    pub published_at_fallback: bool,
}

pub const MAX_INTERVAL_RANK: u8 = 20;

impl Article {
    pub fn published_date(&self) -> NaiveDate {
        self.published_at.date_naive()
    }
}

/// Common surface of the two five-point ordinal scales.
pub trait OrdinalScale: Copy + Eq + Ord + Sized + 'static {
    /// Members in ascending numeric order.
    const ALL: [Self; 5];

    fn label(self) -> &'static str;

    fn to_numeric(self) -> i8 {
        Self::ALL.iter().position(|m| *m == self).expect("member of ALL") as i8 - 2
    }

    fn from_numeric(value: i8) -> Option<Self> {
        if (-2..=2).contains(&value) {
            Some(Self::ALL[(value + 2) as usize])
        } else {
            None
        }
    }

    /// Case-insensitive match against the label text, ignoring spaces,
    /// hyphens and underscores.
    fn parse_label(text: &str) -> Option<Self> {
        let key = fold_label(text);
        Self::ALL.iter().copied().find(|m| fold_label(m.label()) == key)
    }
}

pub(crate) fn fold_label(text: &str) -> String {
    text.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_'))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LeanLabel {
    Democrat,
    NeutralLeaningDemocrat,
    Neutral,
    NeutralLeaningRepublican,
    Republican,
}

impl OrdinalScale for LeanLabel {
    const ALL: [Self; 5] = [
        Self::Democrat,
        Self::NeutralLeaningDemocrat,
        Self::Neutral,
        Self::NeutralLeaningRepublican,
        Self::Republican,
    ];

    fn label(self) -> &'static str {
        match self {
            Self::Democrat => "Democrat",
            Self::NeutralLeaningDemocrat => "Neutral Leaning Democrat",
            Self::Neutral => "Neutral",
            Self::NeutralLeaningRepublican => "Neutral Leaning Republican",
            Self::Republican => "Republican",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToneLabel {
    VeryNegative,
    Negative,
    Neutral,
    Positive,
    VeryPositive,
}

impl OrdinalScale for ToneLabel {
    const ALL: [Self; 5] = [
        Self::VeryNegative,
        Self::Negative,
        Self::Neutral,
        Self::Positive,
        Self::VeryPositive,
    ];

    fn label(self) -> &'static str {
        match self {
            Self::VeryNegative => "Very Negative",
            Self::Negative => "Negative",
            Self::Neutral => "Neutral",
            Self::Positive => "Positive",
            Self::VeryPositive => "Very Positive",
        }
    }
}

/// Either scale member, for code that handles both dimensions uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleLabel {
    Lean(LeanLabel),
    Tone(ToneLabel),
}

pub fn label_to_numeric(label: ScaleLabel) -> i8 {
    match label {
        ScaleLabel::Lean(l) => l.to_numeric(),
        ScaleLabel::Tone(t) => t.to_numeric(),
    }
}

/// Inverse of [`label_to_numeric`] for the chosen dimension.
pub fn numeric_to_label(dimension: ScaleDimension, value: i8) -> Option<ScaleLabel> {
    match dimension {
        ScaleDimension::Lean => LeanLabel::from_numeric(value).map(ScaleLabel::Lean),
        ScaleDimension::Tone => ToneLabel::from_numeric(value).map(ScaleLabel::Tone),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDimension {
    Lean,
    Tone,
}

impl ScaleDimension {
    pub fn labels(self) -> [&'static str; 5] {
        match self {
            Self::Lean => LeanLabel::ALL.map(LeanLabel::label),
            Self::Tone => ToneLabel::ALL.map(ToneLabel::label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleType {
    NewsReport,
    NewsAnalysis,
    Opinion,
}

impl ArticleType {
    pub const ALL: [Self; 3] = [Self::NewsReport, Self::NewsAnalysis, Self::Opinion];

    pub fn label(self) -> &'static str {
        match self {
            Self::NewsReport => "News Report",
            Self::NewsAnalysis => "News Analysis",
            Self::Opinion => "Opinion",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::NewsReport => "news_report",
            Self::NewsAnalysis => "news_analysis",
            Self::Opinion => "opinion",
        }
    }

    pub fn parse_label(text: &str) -> Option<Self> {
        let key = fold_label(text);
        Self::ALL
            .into_iter()
            .find(|t| fold_label(t.label()) == key || fold_label(t.slug()) == key)
    }
}

impl FromStr for ArticleType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_label(s).ok_or_else(|| format!("unknown article type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    HumanOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub article_id: ArticleId,
    pub taxonomy_version: u32,
    pub category_id: NodeId,
    pub topic_id: NodeId,
    pub subtopic_id: NodeId,
    pub article_type: ArticleType,
    pub tone: ToneLabel,
    pub lean: LeanLabel,
    pub provenance: Provenance,
    pub model_id: String,
    pub prompt_version: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceType {
    Fact,
    Quote,
    Opinion,
}

impl SentenceType {
    pub const ALL: [Self; 3] = [Self::Fact, Self::Quote, Self::Opinion];

    pub fn label(self) -> &'static str {
        match self {
            Self::Fact => "fact",
            Self::Quote => "quote",
            Self::Opinion => "opinion",
        }
    }

    pub fn parse_label(text: &str) -> Option<Self> {
        let key = fold_label(text);
        Self::ALL.into_iter().find(|t| t.label() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub article_id: ArticleId,
    pub index: u32,
    pub text: String,
    pub sentence_type: SentenceType,
    /// Byte span in the article body; spans of one article tile the body.
    pub start: usize,
    pub end: usize,
}

/// Typed sentences of one article plus whether the heuristic fallback was used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleSentences {
    pub article_id: ArticleId,
    pub sentences: Vec<Sentence>,
    pub degraded: bool,
}
