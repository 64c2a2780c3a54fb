use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::NaiveDate;
use im::OrdSet;

use super::{Snapshot, StoreError};
use crate::model::{Annotation, Article, ArticleId, ArticleType, NodeId, PublisherId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    /// All articles; annotation attached when present.
    Articles,
    /// Only articles that have a current annotation.
    Annotations,
}

/// Indexed predicates over articles and their current annotations. `None`
/// means "no constraint".
#[derive(Debug, Clone)]
pub struct Selector {
    pub kind: SelectorKind,
    pub publishers: Option<BTreeSet<PublisherId>>,
    /// Inclusive range over the `published_at` calendar date.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    /// Taxonomy subtree: articles whose current annotation is at or under this node.
    pub node: Option<NodeId>,
    pub article_types: Option<BTreeSet<ArticleType>>,
}

impl Selector {
    pub fn articles() -> Self {
        Self {
            kind: SelectorKind::Articles,
            publishers: None,
            date_range: None,
            node: None,
            article_types: None,
        }
    }

    pub fn annotated() -> Self {
        Self {
            kind: SelectorKind::Annotations,
            ..Self::articles()
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if let Some((from, to)) = self.date_range {
            if from > to {
                return Err(StoreError::InvalidSelector(format!("date range {from} > {to}")));
            }
        }
        if self.publishers.as_ref().is_some_and(|p| p.is_empty()) {
            return Err(StoreError::InvalidSelector("empty publisher set".into()));
        }
        if self.article_types.as_ref().is_some_and(|t| t.is_empty()) {
            return Err(StoreError::InvalidSelector("empty article type set".into()));
        }
        if self.kind == SelectorKind::Articles && (self.node.is_some() || self.article_types.is_some()) {
            return Err(StoreError::InvalidSelector(
                "node and article type predicates need kind=annotations".into(),
            ));
        }
        Ok(())
    }

    /// Predicate form, usable for full scans.
    pub fn matches(&self, article: &Article, annotation: Option<&Annotation>) -> bool {
        if self.kind == SelectorKind::Annotations && annotation.is_none() {
            return false;
        }
        if let Some(p) = &self.publishers {
            if !p.contains(&article.publisher_id) {
                return false;
            }
        }
        if let Some((from, to)) = self.date_range {
            let d = article.published_date();
            if d < from || d > to {
                return false;
            }
        }
        if let Some(node) = &self.node {
            match annotation {
                Some(a) if a.category_id == *node || a.topic_id == *node || a.subtopic_id == *node => {}
                _ => return false,
            }
        }
        if let Some(types) = &self.article_types {
            match annotation {
                Some(a) if types.contains(&a.article_type) => {}
                _ => return false,
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct ArticleRecord {
    pub article: Arc<Article>,
    pub annotation: Option<Arc<Annotation>>,
}

impl Snapshot {
    /// Matching records in article-id order, narrowed through the side indexes.
    pub fn query(
        &self,
        selector: &Selector,
    ) -> Result<impl Iterator<Item = ArticleRecord> + '_, StoreError> {
        selector.validate()?;
        let s = &self.state;

        let mut candidates: Option<OrdSet<ArticleId>> = None;
        let mut narrow = |set: OrdSet<ArticleId>| {
            candidates = Some(match candidates.take() {
                None => set,
                Some(c) if c.len() <= set.len() => c.intersection(set),
                Some(c) => set.intersection(c),
            });
        };
        if let Some(node) = &selector.node {
            narrow(s.by_node.get(node).cloned().unwrap_or_default());
        }
        if let Some(pubs) = &selector.publishers {
            narrow(OrdSet::unions(
                pubs.iter().filter_map(|p| s.by_publisher.get(p).cloned()),
            ));
        }
        if let Some((from, to)) = selector.date_range {
            narrow(OrdSet::unions(s.by_date.range(from..=to).map(|(_, ids)| ids.clone())));
        }
        let ids: Box<dyn Iterator<Item = ArticleId> + '_> = match candidates {
            Some(c) => Box::new(c.into_iter()),
            None => Box::new(s.articles.keys().cloned()),
        };
        let selector = selector.clone();
        Ok(ids.filter_map(move |id| {
            let article = s.articles.get(&id)?.clone();
            let annotation = s.annotations.get(&id).cloned();
            selector
                .matches(&article, annotation.as_deref())
                .then_some(ArticleRecord { article, annotation })
        }))
    }
}
