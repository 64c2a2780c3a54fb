//! Article annotation: prompts, providers, response parsing, sentence
//! segmentation and the concurrent batch runner.

pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod provider;
pub mod segment;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Annotation, Article, ArticleId, ArticleSentences, NodeId, Provenance, Sentence, SentenceType};
use crate::review::AnnotationFailure;
use crate::store::{CommitBatch, Record, Store, StoreError};
use crate::taxonomy::{validate_annotation, Level, Taxonomy};

use parse::{Label, LabelSet, ParseError};
use prompt::{PromptError, PromptSet, PromptValues, Task};
use provider::{ChatProvider, Dispatcher, PolicyError, ProviderRequest, RateLimitPolicy};

pub use segment::segment_sentences;

/// Re-asks after the first answer fails to parse.
pub const MAX_REASKS: usize = 2;
pub const SENTENCE_BATCH: usize = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("provider exhausted on {task}: {reason}")]
    ProviderExhausted { task: Task, reason: String },
    #[error("article `{0}` has an empty body")]
    EmptyBody(ArticleId),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("annotation failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<PromptError> for AnnotateError {
    fn from(e: PromptError) -> Self {
        Self::Prompt(e.to_string())
    }
}

fn corrective_suffix(err: &ParseError) -> String {
    format!(
        "\n\nYour previous reply could not be used ({err}). Reply again with exactly one \
         label from the list, alone on the final line."
    )
}

/// Prompt set plus a rate-limited provider.
pub struct Annotator {
    dispatcher: Arc<Dispatcher>,
    prompts: PromptSet,
    pub max_output_tokens: u32,
}

impl Annotator {
    pub fn new(provider: Arc<dyn ChatProvider>, policy: RateLimitPolicy, prompts: PromptSet) -> Result<Self, PolicyError> {
        Ok(Self {
            dispatcher: Arc::new(Dispatcher::new(provider, policy)?),
            prompts,
            max_output_tokens: 512,
        })
    }

    pub fn dispatcher(&self) -> &Arc<Dispatcher> {
        &self.dispatcher
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn model_id(&self) -> &str {
        self.dispatcher.model_id()
    }

    async fn call(&self, task: Task, prompt: String) -> Result<String, AnnotateError> {
        let req = ProviderRequest::new(self.model_id(), prompt, self.max_output_tokens);
        self.dispatcher
            .send(&req)
            .await
            .map(|r| r.text)
            .map_err(|e| AnnotateError::ProviderExhausted {
                task,
                reason: e.to_string(),
            })
    }

    /// Asks for one label, re-asking with a corrective suffix up to
    /// [`MAX_REASKS`] times.
    async fn ask_label(&self, task: Task, values: &PromptValues, set: LabelSet<'_>) -> Result<Label, AnnotateError> {
        let base = self.prompts.get(task).render(values)?;
        let mut prompt = base.clone();
        let mut last_err = None;
        for _ in 0..=MAX_REASKS {
            let raw = self.call(task, prompt).await?;
            match parse::parse_label_response(&raw, set) {
                Ok(label) => return Ok(label),
                Err(e) => {
                    prompt = format!("{base}{}", corrective_suffix(&e));
                    last_err = Some(e);
                }
            }
        }
        Err(AnnotateError::ProviderExhausted {
            task,
            reason: last_err.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    async fn classify_level(
        &self,
        article: &Article,
        taxonomy: &Taxonomy,
        parent: Option<&NodeId>,
        level: Level,
    ) -> Result<NodeId, AnnotateError> {
        let candidates = taxonomy.classifiable_children(parent);
        if candidates.is_empty() {
            return Err(AnnotateError::Invalid(format!(
                "no classifiable {level:?} under {parent:?}"
            )));
        }
        let mut values = prompt::article_values(&article.title, &article.body);
        values.insert("level", format!("{level:?}").to_lowercase());
        values.insert("candidates", prompt::candidate_lines(&candidates));
        match self
            .ask_label(Task::TaxonomyClassify, &values, LabelSet::Nodes(&candidates))
            .await?
        {
            Label::Node(id) => Ok(id),
            other => Err(AnnotateError::Invalid(format!("unexpected label {other:?}"))),
        }
    }

    /// Runs the three taxonomy calls and the type, tone and lean calls.
    /// Nothing is written; the caller commits the result.
    pub async fn annotate_article(
        &self,
        article: &Article,
        taxonomy: &Taxonomy,
        created_at: DateTime<Utc>,
    ) -> Result<Annotation, AnnotateError> {
        if article.body.trim().is_empty() {
            return Err(AnnotateError::EmptyBody(article.id.clone()));
        }
        let category = self.classify_level(article, taxonomy, None, Level::Category).await?;
        let topic = self.classify_level(article, taxonomy, Some(&category), Level::Topic).await?;
        let subtopic = self.classify_level(article, taxonomy, Some(&topic), Level::Subtopic).await?;

        let mut values = prompt::article_values(&article.title, &article.body);
        values.insert("definition", prompt::ARTICLE_TYPE_DEFINITION.to_string());
        values.insert("labels", prompt::article_type_label_lines());
        let Label::ArticleType(article_type) = self.ask_label(Task::ArticleType, &values, LabelSet::ArticleType).await? else {
            unreachable!("article type label set")
        };
        let values = prompt::tone_values(&article.title, &article.body);
        let Label::Tone(tone) = self.ask_label(Task::Tone, &values, LabelSet::Tone).await? else {
            unreachable!("tone label set")
        };
        let values = prompt::lean_values(&article.title, &article.body);
        let Label::Lean(lean) = self.ask_label(Task::Lean, &values, LabelSet::Lean).await? else {
            unreachable!("lean label set")
        };

        let annotation = Annotation {
            article_id: article.id.clone(),
            taxonomy_version: taxonomy.version(),
            category_id: category,
            topic_id: topic,
            subtopic_id: subtopic,
            article_type,
            tone,
            lean,
            provenance: Provenance::Llm,
            model_id: self.model_id().to_string(),
            prompt_version: self.prompts.annotation_version(),
            created_at,
        };
        let violations = validate_annotation(&annotation, taxonomy).map_err(|e| AnnotateError::Invalid(e.to_string()))?;
        if !violations.is_empty() {
            return Err(AnnotateError::Invalid(format!("{violations:?}")));
        }
        Ok(annotation)
    }

    async fn label_sentence_batch(
        &self,
        texts: &[(u32, String)],
    ) -> Result<std::collections::BTreeMap<u32, SentenceType>, AnnotateError> {
        let lines = texts
            .iter()
            .map(|(i, t)| format!("[{i}] {}", crate::model::normalize_whitespace(t)))
            .collect::<Vec<_>>()
            .join("\n");
        let mut values = PromptValues::new();
        values.insert(
            "labels",
            SentenceType::ALL.map(SentenceType::label).join(", "),
        );
        values.insert("sentences", lines);
        let prompt = self.prompts.get(Task::SentenceTypes).render(&values)?;
        let raw = self.call(Task::SentenceTypes, prompt).await?;
        let lo = texts.first().map(|t| t.0).unwrap_or(0);
        let hi = texts.last().map(|t| t.0 + 1).unwrap_or(0);
        let mut labels = parse::parse_sentence_labels(&raw, lo..hi);
        labels.retain(|i, _| texts.iter().any(|(j, _)| j == i));
        Ok(labels)
    }

    /// Types every sentence in batches of [`SENTENCE_BATCH`]. Indices the
    /// provider leaves unlabeled are re-asked once, then fall back to the
    /// quotation-mark heuristic and mark the result degraded.
    pub async fn classify_sentences(
        &self,
        article: &Article,
        spans: &[std::ops::Range<usize>],
    ) -> Result<ArticleSentences, AnnotateError> {
        let texts: Vec<(u32, String)> = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, segment::span_text(&article.body, s)))
            .collect();
        let mut labels = std::collections::BTreeMap::new();
        let mut degraded = false;
        for chunk in texts.chunks(SENTENCE_BATCH) {
            let mut got = self.label_sentence_batch(chunk).await?;
            let missing: Vec<(u32, String)> = chunk
                .iter()
                .filter(|(i, _)| !got.contains_key(i))
                .cloned()
                .collect();
            if !missing.is_empty() {
                got.extend(self.label_sentence_batch(&missing).await?);
                for (i, text) in &missing {
                    if !got.contains_key(i) {
                        degraded = true;
                        got.insert(*i, fallback_sentence_type(text));
                    }
                }
            }
            labels.extend(got);
        }
        let sentences = texts
            .into_iter()
            .zip(spans)
            .map(|((i, text), span)| Sentence {
                article_id: article.id.clone(),
                index: i,
                text,
                sentence_type: labels[&i],
                start: span.start,
                end: span.end,
            })
            .collect();
        Ok(ArticleSentences {
            article_id: article.id.clone(),
            sentences,
            degraded,
        })
    }
}

/// A sentence holding a pair of quotation marks is a quote, anything else a fact.
pub fn fallback_sentence_type(text: &str) -> SentenceType {
    let straight = text.matches('"').count() >= 2;
    let curly = text.contains('“') && text.contains('”');
    if straight || curly {
        SentenceType::Quote
    } else {
        SentenceType::Fact
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleFailure {
    pub article_id: ArticleId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub attempted: usize,
    pub annotated: usize,
    /// Articles whose sentence typing used the fallback heuristic.
    pub degraded: usize,
    pub failed: Vec<ArticleFailure>,
    pub requests: u64,
}

enum Outcome {
    Done { degraded: bool },
    Failed(ArticleFailure),
}

async fn process_one(
    store: &Store,
    annotator: &Annotator,
    taxonomy: &Taxonomy,
    article: &Article,
    now: DateTime<Utc>,
) -> Outcome {
    let result = async {
        let annotation = annotator.annotate_article(article, taxonomy, now).await?;
        let spans = segment_sentences(&article.body);
        let sentences = annotator.classify_sentences(article, &spans).await?;
        Ok::<_, AnnotateError>((annotation, sentences))
    }
    .await;
    let committed = match result {
        Ok((annotation, sentences)) => {
            let degraded = sentences.degraded;
            let batch = CommitBatch::new()
                .put(Record::Annotation(annotation))
                .put(Record::Sentences(sentences));
            store.commit(batch).map(|_| degraded).map_err(AnnotateError::from)
        }
        Err(e) => Err(e),
    };
    match committed {
        Ok(degraded) => Outcome::Done { degraded },
        Err(e) => {
            let reason = e.to_string();
            tracing::warn!(article = %article.id, %reason, "annotation failed");
            if !matches!(e, AnnotateError::Store(_)) {
                let failure = AnnotationFailure {
                    article_id: article.id.clone(),
                    reason: reason.clone(),
                    at: now,
                };
                if let Err(err) = store.commit(CommitBatch::new().put(Record::AnnotationFailure(failure))) {
                    tracing::error!(article = %article.id, error = %err, "could not record failure");
                }
            }
            Outcome::Failed(ArticleFailure {
                article_id: article.id.clone(),
                reason,
            })
        }
    }
}

/// Annotates `pending` concurrently. Each article's annotation and typed
/// sentences commit together; a failed article records an
/// [`AnnotationFailure`] and stays unannotated.
pub async fn run_annotation_batch(
    store: &Store,
    pending: Vec<Arc<Article>>,
    annotator: &Annotator,
    taxonomy: &Taxonomy,
    now: DateTime<Utc>,
) -> BatchReport {
    let before = annotator.dispatcher.request_count();
    let concurrency = annotator.dispatcher.policy().max_in_flight as usize;
    let mut report = BatchReport {
        attempted: pending.len(),
        ..BatchReport::default()
    };
    let outcomes: Vec<Outcome> = stream::iter(pending.iter())
        .map(|a| process_one(store, annotator, taxonomy, a, now))
        .buffer_unordered(concurrency.max(1))
        .collect()
        .await;
    for o in outcomes {
        match o {
            Outcome::Done { degraded } => {
                report.annotated += 1;
                report.degraded += usize::from(degraded);
            }
            Outcome::Failed(f) => report.failed.push(f),
        }
    }
    report.failed.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    report.requests = annotator.dispatcher.request_count() - before;
    report
}
