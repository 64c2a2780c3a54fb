//! Same-day event clustering, event summaries, sentence composition and
//! cross-publisher top facts.

pub mod vectorize;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::parse::{parse_summary, Summary};
use crate::annotation::prompt::{PromptValues, Task};
use crate::annotation::{segment, Annotator, MAX_REASKS};
use crate::model::{Article, ArticleId, ArticleSentences, PublisherId, SentenceType};
use crate::store::{CommitBatch, Record, Snapshot, Store, StoreError};

use vectorize::{similarity_graph, tfidf, tokenize};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventsError {
    #[error("article `{0}` has no typed sentences")]
    MissingSentenceData(ArticleId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    /// Article similarity threshold.
    pub tau: f64,
    /// Fact-sentence similarity threshold.
    pub tau_fact: f64,
    pub top_facts: usize,
    /// Leading body sentences used for article similarity.
    pub lead_sentences: usize,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            tau: 0.35,
            tau_fact: 0.5,
            top_facts: 5,
            lead_sentences: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceStats {
    pub fact: u32,
    pub quote: u32,
    pub opinion: u32,
    pub fact_share: f64,
    pub quote_share: f64,
    pub opinion_share: f64,
}

impl SentenceStats {
    pub fn from_counts(fact: u32, quote: u32, opinion: u32) -> Self {
        let total = f64::from(fact + quote + opinion);
        let share = |c: u32| if total > 0.0 { f64::from(c) / total } else { 0.0 };
        Self {
            fact,
            quote,
            opinion,
            fact_share: share(fact),
            quote_share: share(quote),
            opinion_share: share(opinion),
        }
    }

    pub fn total(&self) -> u32 {
        self.fact + self.quote + self.opinion
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactVariation {
    pub article_id: ArticleId,
    pub publisher_id: PublisherId,
    pub sentence_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopFact {
    pub id: String,
    pub event_id: String,
    pub canonical_text: String,
    pub variations: Vec<FactVariation>,
    /// Every publisher with an article in the event; true when it
    /// contributed at least one variation.
    pub publisher_mentions: BTreeMap<PublisherId, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub window_date: NaiveDate,
    /// Most connected member first, then by id.
    pub article_ids: Vec<ArticleId>,
    pub publisher_ids: Vec<PublisherId>,
    pub importance: u32,
    pub first_published_at: DateTime<Utc>,
    pub short_title: String,
    pub description: String,
    pub summary_degraded: bool,
    pub sentence_stats: SentenceStats,
    pub top_facts: Vec<TopFact>,
}

impl Event {
    pub fn fact(&self, fact_id: &str) -> Option<&TopFact> {
        self.top_facts.iter().find(|f| f.id == fact_id)
    }
}

/// All events of one calendar day; replaced as a whole on recompute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub window_date: NaiveDate,
    pub params: EventParams,
    pub events: Vec<Event>,
}

/// Title plus the leading sentences of the body.
pub fn similarity_text(article: &Article, lead_sentences: usize) -> String {
    let mut text = article.title.clone();
    for span in segment::segment_sentences(&article.body).iter().take(lead_sentences) {
        text.push('\n');
        text.push_str(&article.body[span.clone()]);
    }
    text
}

fn event_id(date: NaiveDate, members: &[ArticleId]) -> String {
    let mut sorted: Vec<&str> = members.iter().map(ArticleId::as_str).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    format!("ev-{}-{}", date.format("%Y%m%d"), hex::encode(&h.finalize()[..4]))
}

/// Clusters one day's articles: tf-idf cosine over title and lead
/// sentences, edges at `tau` or above, connected components of two or
/// more articles. Returned events carry no title, stats or facts yet.
pub fn cluster_events(window_date: NaiveDate, articles: &[Arc<Article>], params: &EventParams) -> Vec<Event> {
    let mut articles: Vec<&Arc<Article>> = articles.iter().collect();
    articles.sort_by(|a, b| a.id.cmp(&b.id));
    debug_assert!(articles.iter().all(|a| a.published_date() == window_date));
    let docs: Vec<Vec<String>> = articles
        .iter()
        .map(|a| tokenize(&similarity_text(a, params.lead_sentences)))
        .collect();
    let graph = similarity_graph(&tfidf(&docs), params.tau);
    graph
        .groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let mut members = g.clone();
            members.sort_by(|&a, &b| graph.degree[b].cmp(&graph.degree[a]).then(a.cmp(&b)));
            let article_ids: Vec<ArticleId> = members.iter().map(|&i| articles[i].id.clone()).collect();
            let publisher_ids: BTreeSet<PublisherId> =
                members.iter().map(|&i| articles[i].publisher_id.clone()).collect();
            let first_published_at = members
                .iter()
                .map(|&i| articles[i].published_at)
                .min()
                .expect("non-empty group");
            Event {
                id: event_id(window_date, &article_ids),
                window_date,
                importance: article_ids.len() as u32,
                article_ids,
                publisher_ids: publisher_ids.into_iter().collect(),
                first_published_at,
                short_title: String::new(),
                description: String::new(),
                summary_degraded: false,
                sentence_stats: SentenceStats::default(),
                top_facts: Vec::new(),
            }
        })
        .collect()
}

/// Importance descending, then earliest first publication, then id.
pub fn rank_events(mut events: Vec<Event>) -> Vec<Event> {
    events.sort_by(|a, b| {
        b.importance
            .cmp(&a.importance)
            .then(a.first_published_at.cmp(&b.first_published_at))
            .then(a.id.cmp(&b.id))
    });
    events
}

pub fn sentence_type_stats(
    event: &Event,
    sentences: &BTreeMap<ArticleId, Arc<ArticleSentences>>,
) -> Result<SentenceStats, EventsError> {
    let (mut f, mut q, mut o) = (0, 0, 0);
    for id in &event.article_ids {
        let s = sentences
            .get(id)
            .ok_or_else(|| EventsError::MissingSentenceData(id.clone()))?;
        for sent in &s.sentences {
            match sent.sentence_type {
                SentenceType::Fact => f += 1,
                SentenceType::Quote => q += 1,
                SentenceType::Opinion => o += 1,
            }
        }
    }
    Ok(SentenceStats::from_counts(f, q, o))
}

/// Groups the members' fact sentences by similarity and returns the `k`
/// groups covering the most publishers (then the most variations, then the
/// earliest sentence).
pub fn extract_top_facts(
    event: &Event,
    articles: &BTreeMap<ArticleId, Arc<Article>>,
    sentences: &BTreeMap<ArticleId, Arc<ArticleSentences>>,
    tau_fact: f64,
    k: usize,
) -> Vec<TopFact> {
    let mut facts: Vec<FactVariation> = Vec::new();
    let mut member_ids: Vec<&ArticleId> = event.article_ids.iter().collect();
    member_ids.sort();
    for id in member_ids {
        let (Some(a), Some(s)) = (articles.get(id), sentences.get(id)) else { continue };
        for sent in s.sentences.iter().filter(|s| s.sentence_type == SentenceType::Fact) {
            facts.push(FactVariation {
                article_id: id.clone(),
                publisher_id: a.publisher_id.clone(),
                sentence_index: sent.index,
                text: sent.text.clone(),
            });
        }
    }
    if facts.is_empty() || k == 0 {
        return Vec::new();
    }
    let docs: Vec<Vec<String>> = facts.iter().map(|f| tokenize(&f.text)).collect();
    let graph = similarity_graph(&tfidf(&docs), tau_fact);

    struct Group {
        members: Vec<usize>,
        publishers: usize,
    }
    let mut groups: Vec<Group> = graph
        .groups
        .iter()
        .map(|g| Group {
            publishers: g.iter().map(|&i| &facts[i].publisher_id).collect::<BTreeSet<_>>().len(),
            members: g.clone(),
        })
        .collect();
    // Members are ascending and facts are ordered by (article id, index), so
    // members[0] is the group's earliest sentence.
    groups.sort_by(|a, b| {
        b.publishers
            .cmp(&a.publishers)
            .then(b.members.len().cmp(&a.members.len()))
            .then(a.members[0].cmp(&b.members[0]))
    });

    groups
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, g)| {
            let canonical = *g
                .members
                .iter()
                .max_by(|&&a, &&b| {
                    let mean = |x: usize| g.members.iter().map(|&m| graph.sims[x][m]).sum::<f64>();
                    mean(a).total_cmp(&mean(b)).then(b.cmp(&a))
                })
                .expect("non-empty group");
            let contributing: BTreeSet<&PublisherId> = g.members.iter().map(|&i| &facts[i].publisher_id).collect();
            TopFact {
                id: format!("f{}", rank + 1),
                event_id: event.id.clone(),
                canonical_text: facts[canonical].text.clone(),
                variations: g.members.iter().map(|&i| facts[i].clone()).collect(),
                publisher_mentions: event
                    .publisher_ids
                    .iter()
                    .map(|p| (p.clone(), contributing.contains(p)))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub event_id: String,
    pub cells: Vec<bool>,
}

/// Event × publisher grid: a cell is set when the publisher has at least one
/// member article in the event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub publishers: Vec<PublisherId>,
    pub rows: Vec<CoverageRow>,
}

pub fn coverage_matrix(events: &[Event], publishers: &[PublisherId]) -> CoverageMatrix {
    CoverageMatrix {
        publishers: publishers.to_vec(),
        rows: events
            .iter()
            .map(|e| CoverageRow {
                event_id: e.id.clone(),
                cells: publishers.iter().map(|p| e.publisher_ids.contains(p)).collect(),
            })
            .collect(),
    }
}

const MAX_HEADLINES: usize = 10;
const MAX_TITLE_WORDS: usize = 12;
const MAX_DESCRIPTION_SENTENCES: usize = 4;

pub fn placeholder_title(importance: u32) -> String {
    format!("Untitled event ({importance} articles)")
}

/// One event_summary call over member headlines and opening sentences.
/// Returns `(title, description, degraded)`; exhausted retries give the
/// placeholder title and `degraded = true`.
pub async fn summarize_event(
    event: &Event,
    articles: &BTreeMap<ArticleId, Arc<Article>>,
    annotator: &Annotator,
) -> (String, String, bool) {
    let lines: Vec<String> = event
        .article_ids
        .iter()
        .filter_map(|id| articles.get(id))
        .take(MAX_HEADLINES)
        .enumerate()
        .map(|(n, a)| {
            let first = segment::segment_sentences(&a.body)
                .first()
                .map(|s| segment::span_text(&a.body, s))
                .unwrap_or_default();
            format!(
                "[{}] {} :: {}",
                n + 1,
                crate::model::normalize_whitespace(&a.title),
                crate::model::normalize_whitespace(&first)
            )
        })
        .collect();
    let mut values = PromptValues::new();
    values.insert("headlines", lines.join("\n"));
    let fallback = (placeholder_title(event.importance), String::new(), true);
    let Ok(prompt) = annotator.prompts().get(Task::EventSummary).render(&values) else {
        return fallback;
    };
    for _ in 0..=MAX_REASKS {
        let req = crate::annotation::provider::ProviderRequest::new(
            annotator.model_id(),
            prompt.clone(),
            annotator.max_output_tokens,
        );
        let Ok(resp) = annotator.dispatcher().send(&req).await else {
            return fallback;
        };
        if let Ok(Summary { title, description }) = parse_summary(&resp.text) {
            let title = title.split_whitespace().take(MAX_TITLE_WORDS).collect::<Vec<_>>().join(" ");
            let spans = segment::segment_sentences(&description);
            let description = spans
                .iter()
                .take(MAX_DESCRIPTION_SENTENCES)
                .map(|s| segment::span_text(&description, s))
                .collect::<Vec<_>>()
                .join(" ");
            return (title, description, false);
        }
    }
    fallback
}

/// What [`recompute_window`] did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_date: NaiveDate,
    pub articles: usize,
    /// Articles left out because they have no typed sentences yet.
    pub skipped_untyped: usize,
    pub events: usize,
    pub sequence: u64,
}

/// Fully computes a day's events from a snapshot without writing anything.
pub async fn build_window(
    snapshot: &Snapshot,
    window_date: NaiveDate,
    annotator: &Annotator,
    params: &EventParams,
) -> (EventWindow, usize) {
    let all = snapshot.articles_on(window_date);
    let mut sentences: BTreeMap<ArticleId, Arc<ArticleSentences>> = BTreeMap::new();
    let mut typed: Vec<Arc<Article>> = Vec::new();
    for a in &all {
        if let Some(s) = snapshot.sentences(&a.id) {
            sentences.insert(a.id.clone(), s.clone());
            typed.push(a.clone());
        }
    }
    let skipped = all.len() - typed.len();
    let by_id: BTreeMap<ArticleId, Arc<Article>> = typed.iter().map(|a| (a.id.clone(), a.clone())).collect();
    let mut events = rank_events(cluster_events(window_date, &typed, params));
    for e in &mut events {
        let (title, description, degraded) = summarize_event(e, &by_id, annotator).await;
        e.short_title = title;
        e.description = description;
        e.summary_degraded = degraded;
        e.sentence_stats = sentence_type_stats(e, &sentences).expect("members are typed");
        e.top_facts = extract_top_facts(e, &by_id, &sentences, params.tau_fact, params.top_facts);
    }
    (
        EventWindow {
            window_date,
            params: *params,
            events,
        },
        skipped,
    )
}

/// Recomputes one day and atomically replaces its stored window.
pub async fn recompute_window(
    store: &Store,
    window_date: NaiveDate,
    annotator: &Annotator,
    params: &EventParams,
) -> Result<WindowReport, EventsError> {
    store.check_writable()?;
    let snapshot = store.snapshot();
    let (window, skipped) = build_window(&snapshot, window_date, annotator, params).await;
    let report = WindowReport {
        window_date,
        articles: snapshot.articles_on(window_date).len(),
        skipped_untyped: skipped,
        events: window.events.len(),
        sequence: 0,
    };
    let sequence = store.commit(CommitBatch::new().put(Record::EventWindow(window)))?;
    Ok(WindowReport { sequence, ..report })
}

/// Events of every stored window in `[from, to]`, merged and re-ranked.
pub fn events_in_range(snapshot: &Snapshot, from: NaiveDate, to: NaiveDate) -> Vec<Event> {
    if from > to {
        return Vec::new();
    }
    rank_events(
        snapshot
            .event_windows_in(from, to)
            .flat_map(|w| w.events.iter().cloned())
            .collect(),
    )
}
