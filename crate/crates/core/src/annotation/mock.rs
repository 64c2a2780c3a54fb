//! Offline provider driven by a keyword lexicon.
//!
//! The mock reads the fenced blocks out of a rendered prompt, scores every
//! lexicon entry for the task by counting keyword occurrences, and answers
//! with the best entry's label. Ties go to the entry listed first; no match
//! gives the task default (Neutral, News Report, fact, or the first
//! taxonomy candidate).

use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::provider::{ChatProvider, ProviderError, ProviderRequest, ProviderResponse, TokenUsage};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    /// Full node-id path: category, topic, subtopic.
    pub path: Vec<String>,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub taxonomy: Vec<TaxonomyEntry>,
    #[serde(default)]
    pub article_type: Vec<LabelEntry>,
    #[serde(default)]
    pub tone: Vec<LabelEntry>,
    #[serde(default)]
    pub lean: Vec<LabelEntry>,
    #[serde(default)]
    pub sentence_type: Vec<LabelEntry>,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon file: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon syntax: {0}")]
    Syntax(#[from] toml::de::Error),
}

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self, LexiconError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lexicon serializes")
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return 0;
    }
    tokens.windows(phrase.len()).filter(|w| *w == phrase).count()
}

fn score(tokens: &[String], keywords: &[String]) -> usize {
    keywords
        .iter()
        .map(|k| count_phrase(tokens, &word_tokens(k)))
        .sum()
}

/// Index of the highest-scoring entry with a positive score; first wins ties.
fn best<'a, T>(
    tokens: &[String],
    entries: impl IntoIterator<Item = (usize, &'a T)>,
    keywords: impl Fn(&T) -> &[String],
) -> Option<usize>
where
    T: 'a,
{
    let mut best: Option<(usize, usize)> = None;
    for (i, e) in entries {
        let s = score(tokens, keywords(e));
        if s > 0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Text between `<<<NAME\n` and `\nNAME>>>`.
pub(crate) fn fenced<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<<<{name}\n");
    let close = format!("\n{name}>>>");
    let start = prompt.find(&open)? + open.len();
    let end = start + prompt[start..].find(&close)?;
    Some(&prompt[start..end])
}

const SUMMARY_TITLE_WORDS: usize = 12;

#[derive(Debug, Clone)]
pub struct MockProvider {
    lexicon: Lexicon,
    model_id: String,
    latency: Duration,
}

impl MockProvider {
    pub fn new(lexicon: Lexicon) -> Self {
        Self {
            lexicon,
            model_id: "mock-lexicon".into(),
            latency: Duration::ZERO,
        }
    }

    /// Simulated service time per request, spent on the tokio clock.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn label_answer(&self, entries: &[LabelEntry], text: &str, default: &str) -> String {
        let tokens = word_tokens(text);
        best(&tokens, entries.iter().enumerate(), |e| &e.keywords)
            .map(|i| entries[i].label.clone())
            .unwrap_or_else(|| default.to_string())
    }

    fn taxonomy_answer(&self, prompt: &str) -> String {
        let candidates: Vec<&str> = fenced(prompt, "CANDIDATES")
            .unwrap_or_default()
            .lines()
            .filter_map(|l| l.split('|').next().map(str::trim))
            .filter(|l| !l.is_empty())
            .collect();
        let tokens = word_tokens(fenced(prompt, "ARTICLE").unwrap_or_default());
        let eligible = self
            .lexicon
            .taxonomy
            .iter()
            .enumerate()
            .filter(|(_, e)| e.path.iter().any(|p| candidates.contains(&p.as_str())));
        best(&tokens, eligible, |e| &e.keywords)
            .and_then(|i| {
                self.lexicon.taxonomy[i]
                    .path
                    .iter()
                    .find(|p| candidates.contains(&p.as_str()))
                    .cloned()
            })
            .or_else(|| candidates.first().map(|c| c.to_string()))
            .unwrap_or_default()
    }

    fn sentence_answer(&self, prompt: &str) -> String {
        let mut out = Vec::new();
        for line in fenced(prompt, "SENTENCES").unwrap_or_default().lines() {
            let Some(rest) = line.strip_prefix('[') else { continue };
            let Some((idx, text)) = rest.split_once(']') else { continue };
            let label = self.label_answer(&self.lexicon.sentence_type, text, "fact");
            out.push(format!("{}: {}", idx.trim(), label));
        }
        out.join("\n")
    }

    fn summary_answer(&self, prompt: &str) -> String {
        let rows: Vec<(&str, &str)> = fenced(prompt, "HEADLINES")
            .unwrap_or_default()
            .lines()
            .filter_map(|l| {
                let rest = l.split_once(']')?.1;
                let (head, first) = rest.split_once(" :: ").unwrap_or((rest, ""));
                Some((head.trim(), first.trim()))
            })
            .collect();
        let title = rows
            .first()
            .map(|(h, _)| h.split_whitespace().take(SUMMARY_TITLE_WORDS).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let description = rows
            .iter()
            .take(3)
            .map(|(_, f)| *f)
            .filter(|f| !f.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        format!("TITLE: {title}\nDESCRIPTION: {description}")
    }

    pub fn answer(&self, prompt: &str) -> String {
        let task = prompt
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("TASK:"))
            .map(str::trim)
            .unwrap_or_default();
        let article = || fenced(prompt, "ARTICLE").unwrap_or_default();
        match task {
            "taxonomy_classify" => self.taxonomy_answer(prompt),
            "article_type" => self.label_answer(&self.lexicon.article_type, article(), "News Report"),
            "tone" => self.label_answer(&self.lexicon.tone, article(), "Neutral"),
            "lean" => self.label_answer(&self.lexicon.lean, article(), "Neutral"),
            "sentence_types" => self.sentence_answer(prompt),
            "event_summary" => self.summary_answer(prompt),
            _ => String::new(),
        }
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let text = self.answer(&request.prompt);
        Ok(ProviderResponse {
            usage: TokenUsage {
                prompt_tokens: word_tokens(&request.prompt).len() as u32,
                completion_tokens: word_tokens(&text).len() as u32,
            },
            text,
            latency: self.latency,
            status: 200,
        })
    }
}
