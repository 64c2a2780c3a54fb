//! Human review of model labels: weekly stratified sampling, approve/override
//! verdicts with an audit trail, and taxonomy change proposals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Annotation, ArticleId, ArticleType, LeanLabel, NodeId, Provenance, PublisherId, ToneLabel,
};
use crate::store::{CommitBatch, Record, Snapshot, Store, StoreError};
use crate::taxonomy::{Level, Taxonomy, TaxonomyError, TaxonomyNode};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown review task `{0}`")]
    UnknownTask(String),
    #[error("review task `{0}` is already resolved")]
    TaskAlreadyResolved(String),
    #[error("invalid override: {0}")]
    InvalidOverrideLabel(String),
    #[error("article `{0}` has no current annotation")]
    MissingAnnotation(ArticleId),
    #[error("no resolved review tasks in the period")]
    EmptyPeriod,
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("invalid week `{0}`, expected YYYY-Www")]
    InvalidWeek(String),
    #[error("unknown proposal `{0}`")]
    UnknownProposal(String),
    #[error("proposal `{0}` is not open")]
    ProposalNotOpen(String),
    #[error("proposal drafted against taxonomy v{base}, current is v{current}")]
    StaleProposal { base: u32, current: u32 },
    #[error("conflicting proposal: {0}")]
    ConflictingProposal(String),
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error("no taxonomy has been loaded")]
    NoTaxonomy,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// ISO week, written `2024-W34`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReviewWeek {
    pub year: i32,
    pub week: u32,
}

impl ReviewWeek {
    pub fn containing(date: NaiveDate) -> Self {
        let w = date.iso_week();
        Self {
            year: w.year(),
            week: w.week(),
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week")
    }

    pub fn last_day(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Sun).expect("validated week")
    }

    pub fn contains(self, date: NaiveDate) -> bool {
        Self::containing(date) == self
    }
}

impl fmt::Display for ReviewWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for ReviewWeek {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ReviewError::InvalidWeek(s.to_string());
        let (y, w) = s.split_once("-W").ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).ok_or_else(bad)?;
        Ok(Self { year, week })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Approved,
    Overridden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Taxonomy,
    ArticleType,
    Tone,
    Lean,
}

impl Dimension {
    pub const ALL: [Self; 4] = [Self::Taxonomy, Self::ArticleType, Self::Tone, Self::Lean];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub id: String,
    pub article_id: ArticleId,
    pub publisher_id: PublisherId,
    /// The annotation as it was when sampled.
    pub annotation: Annotation,
    pub assigned_week: String,
    pub status: TaskStatus,
    pub reviewer_id: Option<String>,
    pub verdict_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub overridden: Vec<Dimension>,
}

/// Per-dimension replacement labels. At least one must be set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtopic_id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article_type: Option<ArticleType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tone: Option<ToneLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lean: Option<LeanLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Override(Overrides),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Approve,
    Override,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub task_id: String,
    pub article_id: ArticleId,
    pub reviewer_id: String,
    pub at: DateTime<Utc>,
    pub verdict: VerdictKind,
    pub dimensions: Vec<Dimension>,
    pub before: Annotation,
    pub after: Option<Annotation>,
}

/// Marks an article whose annotation ran out of retries; it stays pending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub article_id: ArticleId,
    pub reason: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub tasks: Vec<ReviewTask>,
    /// How many tasks short of the requested size, when the population ran out.
    pub shortfall: Option<usize>,
}

/// Draws a stratified sample of annotated articles published in `week`:
/// proportional allocation across publishers (largest remainder, ties to the
/// earlier slug), then uniform within each stratum from a seeded generator.
/// Articles that already have a task for this week are excluded.
pub fn sample_for_review(
    snapshot: &Snapshot,
    week: ReviewWeek,
    n: usize,
    seed: u64,
) -> Result<Sample, ReviewError> {
    if n == 0 {
        return Err(ReviewError::InvalidSampleSize);
    }
    let week_key = week.to_string();
    let already: BTreeSet<&ArticleId> = snapshot
        .review_tasks()
        .filter(|t| t.assigned_week == week_key)
        .map(|t| &t.article_id)
        .collect();

    let mut strata: BTreeMap<PublisherId, Vec<ArticleId>> = BTreeMap::new();
    for annotation in snapshot.annotations() {
        let Some(article) = snapshot.article(&annotation.article_id) else {
            continue;
        };
        if week.contains(article.published_date()) && !already.contains(&article.id) {
            strata
                .entry(article.publisher_id.clone())
                .or_default()
                .push(article.id.clone());
        }
    }
    let population: usize = strata.values().map(Vec::len).sum();
    let take = n.min(population);
    let quotas = allocate(&strata, take);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(take);
    for (publisher, ids) in &strata {
        let k = quotas.get(publisher).copied().unwrap_or(0);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, ids.len(), k).into_vec();
        picked.sort_unstable();
        for i in picked {
            let article_id = ids[i].clone();
            let annotation = (**snapshot.annotation(&article_id).expect("stratum is annotated")).clone();
            tasks.push(ReviewTask {
                id: format!("{week_key}:{article_id}"),
                article_id,
                publisher_id: publisher.clone(),
                annotation,
                assigned_week: week_key.clone(),
                status: TaskStatus::Pending,
                reviewer_id: None,
                verdict_at: None,
                overridden: Vec::new(),
            });
        }
    }
    Ok(Sample {
        tasks,
        shortfall: n.checked_sub(population).filter(|s| *s > 0),
    })
}

fn allocate(strata: &BTreeMap<PublisherId, Vec<ArticleId>>, n: usize) -> BTreeMap<PublisherId, usize> {
    let total: usize = strata.values().map(Vec::len).sum();
    if total == 0 || n == 0 {
        return BTreeMap::new();
    }
    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    let mut assigned = 0;
    for (p, ids) in strata {
        let exact = n * ids.len();
        quotas.insert(p.clone(), exact / total);
        assigned += exact / total;
        remainders.push((exact % total, p.clone()));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (_, p) in remainders.into_iter().take(n - assigned) {
        *quotas.get_mut(&p).expect("known stratum") += 1;
    }
    quotas
}

/// Samples and commits review tasks for a week.
pub fn create_review_tasks(
    store: &Store,
    week: ReviewWeek,
    n: usize,
    seed: u64,
) -> Result<Sample, ReviewError> {
    let mut out = None;
    store.commit_with(|snap| {
        let sample = sample_for_review(snap, week, n, seed)?;
        let batch = sample.tasks.iter().cloned().map(Record::ReviewTask).collect();
        out = Some(sample);
        Ok::<CommitBatch, ReviewError>(batch)
    })?;
    Ok(out.expect("sample computed"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub task: ReviewTask,
    pub current: Annotation,
    pub audit: AuditEntry,
}

fn apply_overrides(
    base: &Annotation,
    ov: &Overrides,
    taxonomy: &Taxonomy,
) -> Result<(Annotation, Vec<Dimension>), ReviewError> {
    let mut next = base.clone();
    let mut dims = Vec::new();
    if let Some(sub) = &ov.subtopic_id {
        let node = taxonomy.node(sub).ok_or_else(|| {
            ReviewError::InvalidOverrideLabel(format!(
                "`{sub}` not in taxonomy v{}",
                taxonomy.version()
            ))
        })?;
        if node.level != Level::Subtopic {
            return Err(ReviewError::InvalidOverrideLabel(format!("`{sub}` is not a subtopic")));
        }
        let path = taxonomy.path_to(sub).expect("node exists");
        if *sub != base.subtopic_id {
            next.category_id = path[0].id.clone();
            next.topic_id = path[1].id.clone();
            next.subtopic_id = path[2].id.clone();
            dims.push(Dimension::Taxonomy);
        }
    }
    if let Some(t) = ov.article_type {
        if t != base.article_type {
            next.article_type = t;
            dims.push(Dimension::ArticleType);
        }
    }
    if let Some(t) = ov.tone {
        if t != base.tone {
            next.tone = t;
            dims.push(Dimension::Tone);
        }
    }
    if let Some(l) = ov.lean {
        if l != base.lean {
            next.lean = l;
            dims.push(Dimension::Lean);
        }
    }
    if dims.is_empty() {
        return Err(ReviewError::InvalidOverrideLabel(
            "override must change at least one label".into(),
        ));
    }
    Ok((next, dims))
}

/// Resolves a pending task. Serialized through the store writer, so two
/// verdicts racing on one task cannot both succeed.
pub fn record_verdict(
    store: &Store,
    task_id: &str,
    verdict: &Verdict,
    reviewer_id: &str,
    at: DateTime<Utc>,
) -> Result<VerdictOutcome, ReviewError> {
    let mut out = None;
    store.commit_with(|snap| {
        let task = snap
            .review_task(task_id)
            .ok_or_else(|| ReviewError::UnknownTask(task_id.to_string()))?;
        if task.status != TaskStatus::Pending {
            return Err(ReviewError::TaskAlreadyResolved(task_id.to_string()));
        }
        let current = snap
            .annotation(&task.article_id)
            .ok_or_else(|| ReviewError::MissingAnnotation(task.article_id.clone()))?;
        let mut resolved = (**task).clone();
        resolved.reviewer_id = Some(reviewer_id.to_string());
        resolved.verdict_at = Some(at);
        let mut batch = CommitBatch::new();
        let (after, dims) = match verdict {
            Verdict::Approve => {
                resolved.status = TaskStatus::Approved;
                (None, Vec::new())
            }
            Verdict::Override(ov) => {
                let taxonomy = snap
                    .taxonomy(current.taxonomy_version)
                    .ok_or(ReviewError::NoTaxonomy)?;
                let (mut next, dims) = apply_overrides(current, ov, taxonomy)?;
                next.provenance = Provenance::HumanOverride;
                next.model_id = format!("human:{reviewer_id}");
                next.created_at = at;
                resolved.status = TaskStatus::Overridden;
                resolved.overridden = dims.clone();
                batch.push(Record::Annotation(next.clone()));
                (Some(next), dims)
            }
        };
        let audit = AuditEntry {
            task_id: task_id.to_string(),
            article_id: task.article_id.clone(),
            reviewer_id: reviewer_id.to_string(),
            at,
            verdict: match verdict {
                Verdict::Approve => VerdictKind::Approve,
                Verdict::Override(_) => VerdictKind::Override,
            },
            dimensions: dims,
            before: (**current).clone(),
            after: after.clone(),
        };
        batch.push(Record::ReviewTask(resolved.clone()));
        batch.push(Record::Audit(audit.clone()));
        out = Some(VerdictOutcome {
            task: resolved,
            current: after.unwrap_or_else(|| (**current).clone()),
            audit,
        });
        Ok(batch)
    })?;
    Ok(out.expect("verdict recorded"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRate {
    pub dimension: Dimension,
    pub overridden: usize,
    pub resolved: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub resolved: usize,
    pub dimensions: Vec<DimensionRate>,
}

/// Override rate per label dimension over tasks resolved in `[from, to]`.
pub fn agreement_report(
    snapshot: &Snapshot,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<AgreementReport, ReviewError> {
    let mut resolved = 0usize;
    let mut overridden: BTreeMap<Dimension, usize> = BTreeMap::new();
    for t in snapshot.review_tasks() {
        let Some(at) = t.verdict_at else { continue };
        let day = at.date_naive();
        if t.status == TaskStatus::Pending || day < from || day > to {
            continue;
        }
        resolved += 1;
        for d in &t.overridden {
            *overridden.entry(*d).or_default() += 1;
        }
    }
    if resolved == 0 {
        return Err(ReviewError::EmptyPeriod);
    }
    let dimensions = Dimension::ALL
        .into_iter()
        .map(|d| {
            let o = overridden.get(&d).copied().unwrap_or(0);
            DimensionRate {
                dimension: d,
                overridden: o,
                resolved,
                rate: o as f64 / resolved as f64,
            }
        })
        .collect();
    Ok(AgreementReport {
        from,
        to,
        resolved,
        dimensions,
    })
}

/// Audit log as JSON lines, oldest first.
pub fn audit_log_jsonl(snapshot: &Snapshot) -> String {
    let mut out = String::new();
    for e in snapshot.audit_log() {
        out.push_str(&serde_json::to_string(&**e).expect("audit entry serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalChange {
    AddTopic { category_id: NodeId, id: NodeId, name: String },
    AddSubtopic { topic_id: NodeId, id: NodeId, name: String },
    Rename { node_id: NodeId, new_id: NodeId, new_name: String },
    Retire { node_id: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalStatus {
    Open,
    Applied,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyProposal {
    pub id: String,
    pub base_version: u32,
    pub change: ProposalChange,
    pub proposer: String,
    pub status: ProposalStatus,
    #[serde(default)]
    pub applied_version: Option<u32>,
}

fn taxonomy_err(e: TaxonomyError) -> ReviewError {
    match e {
        TaxonomyError::DuplicateId(_) | TaxonomyError::DuplicateSiblingName { .. } => {
            ReviewError::ConflictingProposal(e.to_string())
        }
        other => ReviewError::InvalidProposal(other.to_string()),
    }
}

/// Produces the next taxonomy version with the proposal's change applied.
/// The input version is left untouched.
pub fn apply_taxonomy_proposal(
    proposal: &TaxonomyProposal,
    current: &Taxonomy,
) -> Result<Taxonomy, ReviewError> {
    if proposal.status != ProposalStatus::Open {
        return Err(ReviewError::ProposalNotOpen(proposal.id.clone()));
    }
    if proposal.base_version != current.version() {
        return Err(ReviewError::StaleProposal {
            base: proposal.base_version,
            current: current.version(),
        });
    }
    let mut nodes: Vec<TaxonomyNode> = current.nodes().to_vec();
    let mut tombstones: Vec<NodeId> = current.tombstones().to_vec();
    let require = |id: &NodeId, level: Level| -> Result<(), ReviewError> {
        match current.node(id) {
            Some(n) if n.level == level => Ok(()),
            Some(_) => Err(ReviewError::InvalidProposal(format!("`{id}` is not a {level:?}"))),
            None => Err(ReviewError::InvalidProposal(format!("unknown node `{id}`"))),
        }
    };
    let fresh_id = |id: &NodeId| -> Result<(), ReviewError> {
        if current.contains(id) || current.tombstones().contains(id) {
            Err(ReviewError::ConflictingProposal(format!("id `{id}` already used")))
        } else {
            Ok(())
        }
    };
    match &proposal.change {
        ProposalChange::AddTopic { category_id, id, name } => {
            require(category_id, Level::Category)?;
            fresh_id(id)?;
            nodes.push(TaxonomyNode {
                id: id.clone(),
                name: name.clone(),
                level: Level::Topic,
                parent_id: Some(category_id.clone()),
            });
        }
        ProposalChange::AddSubtopic { topic_id, id, name } => {
            require(topic_id, Level::Topic)?;
            fresh_id(id)?;
            nodes.push(TaxonomyNode {
                id: id.clone(),
                name: name.clone(),
                level: Level::Subtopic,
                parent_id: Some(topic_id.clone()),
            });
        }
        ProposalChange::Rename { node_id, new_id, new_name } => {
            let old = current
                .node(node_id)
                .ok_or_else(|| ReviewError::InvalidProposal(format!("unknown node `{node_id}`")))?;
            fresh_id(new_id)?;
            let pos = nodes.iter().position(|n| &n.id == node_id).expect("node exists");
            nodes[pos] = TaxonomyNode {
                id: new_id.clone(),
                name: new_name.clone(),
                level: old.level,
                parent_id: old.parent_id.clone(),
            };
            for n in nodes.iter_mut() {
                if n.parent_id.as_ref() == Some(node_id) {
                    n.parent_id = Some(new_id.clone());
                }
            }
            tombstones.push(node_id.clone());
        }
        ProposalChange::Retire { node_id } => {
            if !current.contains(node_id) {
                return Err(ReviewError::InvalidProposal(format!("unknown node `{node_id}`")));
            }
            let retired: Vec<NodeId> = nodes
                .iter()
                .filter(|n| current.is_within(&n.id, node_id))
                .map(|n| n.id.clone())
                .collect();
            nodes.retain(|n| !retired.contains(&n.id));
            tombstones.extend(retired);
        }
    }
    Taxonomy::new(current.version() + 1, nodes, tombstones).map_err(taxonomy_err)
}

/// Records a new open proposal against the latest taxonomy version.
pub fn propose(
    store: &Store,
    change: ProposalChange,
    proposer: &str,
) -> Result<TaxonomyProposal, ReviewError> {
    let mut out = None;
    store.commit_with(|snap| {
        let base = snap.latest_taxonomy().ok_or(ReviewError::NoTaxonomy)?.version();
        let proposal = TaxonomyProposal {
            id: format!("p{}", snap.proposals().count() + 1),
            base_version: base,
            change: change.clone(),
            proposer: proposer.to_string(),
            status: ProposalStatus::Open,
            applied_version: None,
        };
        out = Some(proposal.clone());
        Ok::<_, ReviewError>(CommitBatch::new().put(Record::Proposal(proposal)))
    })?;
    Ok(out.expect("proposal built"))
}

/// Applies a stored proposal, committing the new taxonomy version and the
/// proposal's status change together.
pub fn apply_proposal(store: &Store, proposal_id: &str) -> Result<Taxonomy, ReviewError> {
    let mut out = None;
    store.commit_with(|snap| {
        let proposal = snap
            .proposal(proposal_id)
            .ok_or_else(|| ReviewError::UnknownProposal(proposal_id.to_string()))?;
        let current = snap.latest_taxonomy().ok_or(ReviewError::NoTaxonomy)?;
        let next = apply_taxonomy_proposal(proposal, current)?;
        let mut applied = (**proposal).clone();
        applied.status = ProposalStatus::Applied;
        applied.applied_version = Some(next.version());
        out = Some(next.clone());
        Ok::<_, ReviewError>(
            CommitBatch::new()
                .put(Record::Taxonomy(next))
                .put(Record::Proposal(applied)),
        )
    })?;
    Ok(out.expect("taxonomy built"))
}

pub fn reject_proposal(store: &Store, proposal_id: &str) -> Result<(), ReviewError> {
    store.commit_with(|snap| {
        let proposal = snap
            .proposal(proposal_id)
            .ok_or_else(|| ReviewError::UnknownProposal(proposal_id.to_string()))?;
        if proposal.status != ProposalStatus::Open {
            return Err(ReviewError::ProposalNotOpen(proposal_id.to_string()));
        }
        let mut rejected = (**proposal).clone();
        rejected.status = ProposalStatus::Rejected;
        Ok(CommitBatch::new().put(Record::Proposal(rejected)))
    })?;
    Ok(())
}
