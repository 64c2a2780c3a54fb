use std::sync::Arc;

use chrono::NaiveDate;
use im::{OrdMap, OrdSet, Vector};

use super::{Record, StoreError};
use crate::events::EventWindow;
use crate::model::{
    Annotation, Article, ArticleId, ArticleSentences, NodeId, PublisherId, MAX_INTERVAL_RANK,
};
use crate::review::{AnnotationFailure, AuditEntry, ProposalStatus, ReviewTask, TaskStatus, TaxonomyProposal};
use crate::taxonomy::{validate_annotation, Taxonomy};

/// Logical contents of the store at one sequence number. Cloning is cheap
/// (structural sharing), so every commit produces a fresh immutable value.
#[derive(Debug, Clone, Default)]
pub(crate) struct State {
    pub seq: u64,
    pub articles: OrdMap<ArticleId, Arc<Article>>,
    pub by_url: OrdMap<String, ArticleId>,
    pub by_body_hash: OrdMap<String, ArticleId>,
    pub by_publisher: OrdMap<PublisherId, OrdSet<ArticleId>>,
    pub by_date: OrdMap<NaiveDate, OrdSet<ArticleId>>,
    pub by_node: OrdMap<NodeId, OrdSet<ArticleId>>,
    pub interval_counts: OrdMap<(PublisherId, String), u32>,
    pub annotations: OrdMap<ArticleId, Arc<Annotation>>,
    pub history: OrdMap<ArticleId, Vector<Arc<Annotation>>>,
    pub sentences: OrdMap<ArticleId, Arc<ArticleSentences>>,
    pub event_windows: OrdMap<NaiveDate, Arc<EventWindow>>,
    pub taxonomies: OrdMap<u32, Arc<Taxonomy>>,
    pub review_tasks: OrdMap<String, Arc<ReviewTask>>,
    pub audit: Vector<Arc<AuditEntry>>,
    pub proposals: OrdMap<String, Arc<TaxonomyProposal>>,
    pub failures: OrdMap<ArticleId, Arc<AnnotationFailure>>,
}

fn violation(msg: impl Into<String>) -> StoreError {
    StoreError::IntegrityViolation(msg.into())
}

impl State {
    pub fn apply(&mut self, rec: &Record) -> Result<(), StoreError> {
        match rec {
            Record::Article(a) => self.put_article(a),
            Record::Annotation(a) => self.put_annotation(a),
            Record::Sentences(s) => self.put_sentences(s),
            Record::EventWindow(w) => self.put_event_window(w),
            Record::Taxonomy(t) => self.put_taxonomy(t),
            Record::ReviewTask(t) => self.put_review_task(t),
            Record::Audit(e) => self.put_audit(e),
            Record::Proposal(p) => self.put_proposal(p),
            Record::AnnotationFailure(f) => self.put_failure(f),
        }
    }

    fn require_article(&self, id: &ArticleId) -> Result<(), StoreError> {
        if self.articles.contains_key(id) {
            Ok(())
        } else {
            Err(violation(format!("unknown article `{id}`")))
        }
    }

    fn put_article(&mut self, a: &Article) -> Result<(), StoreError> {
        if self.articles.contains_key(&a.id) {
            return Err(violation(format!("article `{}` already stored", a.id)));
        }
        if self.by_url.contains_key(&a.url) {
            return Err(violation(format!("url `{}` already stored", a.url)));
        }
        if a.body.trim().is_empty() {
            return Err(violation(format!("article `{}` has an empty body", a.id)));
        }
        if a.interval_rank == 0 || a.interval_rank > MAX_INTERVAL_RANK {
            return Err(violation(format!("rank {} out of range", a.interval_rank)));
        }
        let key = (a.publisher_id.clone(), a.interval_id.clone());
        let count = self.interval_counts.get(&key).copied().unwrap_or(0);
        if count >= u32::from(MAX_INTERVAL_RANK) {
            return Err(violation(format!(
                "publisher `{}` already has {} articles in interval `{}`",
                a.publisher_id, count, a.interval_id
            )));
        }
        self.interval_counts.insert(key, count + 1);
        self.by_url.insert(a.url.clone(), a.id.clone());
        self.by_body_hash
            .entry(a.body_hash.clone())
            .or_insert_with(|| a.id.clone());
        self.by_publisher
            .entry(a.publisher_id.clone())
            .or_default()
            .insert(a.id.clone());
        self.by_date
            .entry(a.published_date())
            .or_default()
            .insert(a.id.clone());
        self.articles.insert(a.id.clone(), Arc::new(a.clone()));
        Ok(())
    }

    fn put_annotation(&mut self, a: &Annotation) -> Result<(), StoreError> {
        self.require_article(&a.article_id)?;
        let tax = self
            .taxonomies
            .get(&a.taxonomy_version)
            .ok_or_else(|| violation(format!("unknown taxonomy version {}", a.taxonomy_version)))?;
        let violations = validate_annotation(a, tax).map_err(|e| violation(e.to_string()))?;
        if !violations.is_empty() {
            return Err(violation(format!("invalid annotation: {violations:?}")));
        }
        if let Some(prev) = self.annotations.get(&a.article_id).cloned() {
            for id in [&prev.category_id, &prev.topic_id, &prev.subtopic_id] {
                if let Some(set) = self.by_node.get_mut(id) {
                    set.remove(&a.article_id);
                }
            }
            self.history
                .entry(a.article_id.clone())
                .or_default()
                .push_back(prev);
        }
        for id in [&a.category_id, &a.topic_id, &a.subtopic_id] {
            self.by_node
                .entry(id.clone())
                .or_default()
                .insert(a.article_id.clone());
        }
        self.annotations.insert(a.article_id.clone(), Arc::new(a.clone()));
        self.failures.remove(&a.article_id);
        Ok(())
    }

    fn put_sentences(&mut self, s: &ArticleSentences) -> Result<(), StoreError> {
        self.require_article(&s.article_id)?;
        if s.sentences.is_empty() {
            return Err(violation("sentence list is empty"));
        }
        for (i, sent) in s.sentences.iter().enumerate() {
            if sent.index as usize != i || sent.article_id != s.article_id {
                return Err(violation(format!(
                    "sentences of `{}` are not contiguous at {i}",
                    s.article_id
                )));
            }
        }
        self.sentences.insert(s.article_id.clone(), Arc::new(s.clone()));
        Ok(())
    }

    fn put_event_window(&mut self, w: &EventWindow) -> Result<(), StoreError> {
        let mut seen = std::collections::HashSet::new();
        for e in &w.events {
            for id in &e.article_ids {
                let article = self
                    .articles
                    .get(id)
                    .ok_or_else(|| violation(format!("unknown article `{id}`")))?;
                if article.published_date() != w.window_date {
                    return Err(violation(format!("article `{id}` is outside window {}", w.window_date)));
                }
                if !seen.insert(id) {
                    return Err(violation(format!("article `{id}` is in two events")));
                }
            }
        }
        self.event_windows.insert(w.window_date, Arc::new(w.clone()));
        Ok(())
    }

    fn put_taxonomy(&mut self, t: &Taxonomy) -> Result<(), StoreError> {
        if let Some((_, latest)) = self.taxonomies.get_max() {
            latest
                .check_successor(t)
                .map_err(|e| violation(e.to_string()))?;
        }
        self.taxonomies.insert(t.version(), Arc::new(t.clone()));
        Ok(())
    }

    fn put_review_task(&mut self, t: &ReviewTask) -> Result<(), StoreError> {
        self.require_article(&t.article_id)?;
        if let Some(prev) = self.review_tasks.get(&t.id) {
            if prev.status != TaskStatus::Pending || t.status == TaskStatus::Pending {
                return Err(violation(format!("task `{}` already resolved", t.id)));
            }
        }
        self.review_tasks.insert(t.id.clone(), Arc::new(t.clone()));
        Ok(())
    }

    fn put_audit(&mut self, e: &AuditEntry) -> Result<(), StoreError> {
        if !self.review_tasks.contains_key(&e.task_id) {
            return Err(violation(format!("audit entry for unknown task `{}`", e.task_id)));
        }
        self.audit.push_back(Arc::new(e.clone()));
        Ok(())
    }

    fn put_proposal(&mut self, p: &TaxonomyProposal) -> Result<(), StoreError> {
        if let Some(prev) = self.proposals.get(&p.id) {
            if prev.status != ProposalStatus::Open {
                return Err(violation(format!("proposal `{}` already closed", p.id)));
            }
        }
        self.proposals.insert(p.id.clone(), Arc::new(p.clone()));
        Ok(())
    }

    fn put_failure(&mut self, f: &AnnotationFailure) -> Result<(), StoreError> {
        self.require_article(&f.article_id)?;
        self.failures.insert(f.article_id.clone(), Arc::new(f.clone()));
        Ok(())
    }
}
