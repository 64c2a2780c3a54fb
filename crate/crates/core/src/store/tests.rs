use chrono::{NaiveDate, TimeZone, Utc};

use super::*;
use crate::model::{body_hash, ArticleType, LeanLabel, NodeId, Provenance, ToneLabel};

fn article(n: u32, publisher: &str, day: u32) -> Article {
    let url = format!("https://{publisher}.example/2024/08/{day:02}/story-{n}");
    let body = format!("Body of story {n}. It has two sentences.");
    let hash = body_hash(&body);
    let published_at = Utc.with_ymd_and_hms(2024, 8, day, 10, 0, 0).unwrap();
    Article {
        id: ArticleId::derive(&url, &hash),
        publisher_id: PublisherId::new(publisher),
        url,
        title: format!("Story {n}"),
        body,
        published_at,
        collected_at: published_at,
        interval_rank: 1 + (n % 20) as u8,
        interval_id: format!("2024-08-{day:02}T06"),
        body_hash: hash,
        published_at_fallback: false,
    }
}

fn annotation(a: &Article, subtopic: &str) -> Annotation {
    let parts: Vec<&str> = subtopic.split('.').collect();
    Annotation {
        article_id: a.id.clone(),
        taxonomy_version: 1,
        category_id: NodeId::new(parts[0]),
        topic_id: NodeId::new(parts[..2].join(".")),
        subtopic_id: NodeId::new(subtopic),
        article_type: ArticleType::NewsReport,
        tone: ToneLabel::Neutral,
        lean: LeanLabel::Neutral,
        provenance: Provenance::Llm,
        model_id: "m".into(),
        prompt_version: "p".into(),
        created_at: a.collected_at,
    }
}

fn seeded(dir: &Path) -> (Store, Vec<Article>) {
    let store = Store::open(dir).unwrap();
    let arts = vec![article(1, "ap", 20), article(2, "cnn", 20), article(3, "ap", 21)];
    let mut batch = CommitBatch::new().put(Record::Taxonomy(Taxonomy::seed()));
    for a in &arts {
        batch.push(Record::Article(a.clone()));
    }
    store.commit(batch).unwrap();
    (store, arts)
}

#[test]
fn reopen_replays_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let (store, arts) = seeded(dir.path());
    store
        .commit(CommitBatch::new().put(Record::Annotation(annotation(&arts[0], "economy.jobs.wages"))))
        .unwrap();
    let before = store.snapshot().logical_records();
    let seq = store.sequence();
    drop(store);
    let again = Store::open(dir.path()).unwrap();
    assert_eq!(again.sequence(), seq);
    assert_eq!(again.snapshot().logical_records(), before);
}

#[test]
fn rejected_batch_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (store, arts) = seeded(dir.path());
    let before = store.snapshot().logical_records();
    let ghost = article(99, "nyt", 20);
    let batch = CommitBatch::new()
        .put(Record::Annotation(annotation(&arts[1], "economy.jobs.wages")))
        .put(Record::Annotation(annotation(&ghost, "economy.jobs.wages")));
    assert!(matches!(store.commit(batch), Err(StoreError::IntegrityViolation(_))));
    assert_eq!(store.snapshot().logical_records(), before);

    let mut bad = annotation(&arts[1], "economy.jobs.wages");
    bad.topic_id = NodeId::new("health.policy");
    assert!(store.commit(CommitBatch::new().put(Record::Annotation(bad))).is_err());
    assert!(store.commit(CommitBatch::new().put(Record::Article(arts[0].clone()))).is_err());
}

#[test]
fn interrupted_commit_is_invisible_after_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = seeded(dir.path());
    let before = store.snapshot().logical_records();
    store.set_fail_point(FailPoint::ErrorBeforeManifest);
    let res = store.commit(CommitBatch::new().put(Record::Article(article(4, "fox", 20))));
    assert!(res.is_err());
    assert!(matches!(
        store.commit(CommitBatch::new().put(Record::Article(article(5, "fox", 20)))),
        Err(StoreError::StoreUnavailable(_))
    ));
    drop(store);
    let again = Store::open(dir.path()).unwrap();
    assert_eq!(again.snapshot().logical_records(), before);
    again
        .commit(CommitBatch::new().put(Record::Article(article(4, "fox", 20))))
        .unwrap();
    assert_eq!(again.snapshot().article_count(), 4);
}

#[test]
fn snapshots_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = seeded(dir.path());
    let old = store.snapshot();
    store
        .commit(CommitBatch::new().put(Record::Article(article(7, "wsj", 21))))
        .unwrap();
    assert_eq!(old.article_count(), 3);
    assert_eq!(store.snapshot().article_count(), 4);
}

#[test]
fn second_writer_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _store = Store::open(dir.path()).unwrap();
    assert!(matches!(Store::open(dir.path()), Err(StoreError::StoreUnavailable(_))));
}

#[test]
fn compaction_keeps_logical_content() {
    let dir = tempfile::tempdir().unwrap();
    let (store, arts) = seeded(dir.path());
    store
        .commit(CommitBatch::new().put(Record::Annotation(annotation(&arts[0], "economy.jobs.wages"))))
        .unwrap();
    store
        .commit(CommitBatch::new().put(Record::Annotation(annotation(&arts[0], "health.policy.insurance"))))
        .unwrap();
    let before = store.snapshot().logical_records();
    store.compact().unwrap();
    assert_eq!(store.snapshot().logical_records(), before);
    drop(store);
    let again = Store::open(dir.path()).unwrap();
    assert_eq!(again.snapshot().logical_records(), before);
    assert_eq!(again.snapshot().annotation_history(&arts[0].id).len(), 1);
}

#[test]
fn query_uses_every_predicate() {
    let dir = tempfile::tempdir().unwrap();
    let (store, arts) = seeded(dir.path());
    store
        .commit(
            CommitBatch::new()
                .put(Record::Annotation(annotation(&arts[0], "economy.jobs.wages")))
                .put(Record::Annotation(annotation(&arts[1], "health.policy.insurance"))),
        )
        .unwrap();
    let snap = store.snapshot();
    let day = NaiveDate::from_ymd_opt(2024, 8, 20).unwrap();

    let all: Vec<_> = snap.query(&Selector::articles()).unwrap().collect();
    assert_eq!(all.len(), 3);

    let sel = Selector {
        date_range: Some((day, day)),
        ..Selector::articles()
    };
    assert_eq!(snap.query(&sel).unwrap().count(), 2);

    let sel = Selector {
        node: Some(NodeId::new("economy")),
        ..Selector::annotated()
    };
    let ids: Vec<ArticleId> = snap.query(&sel).unwrap().map(|r| r.article.id.clone()).collect();
    assert_eq!(ids, vec![arts[0].id.clone()]);

    let sel = Selector {
        publishers: Some([PublisherId::new("ap")].into_iter().collect()),
        ..Selector::annotated()
    };
    assert_eq!(snap.query(&sel).unwrap().count(), 1);

    let bad = Selector {
        node: Some(NodeId::new("economy")),
        ..Selector::articles()
    };
    assert!(matches!(snap.query(&bad), Err(StoreError::InvalidSelector(_))));
}

#[test]
fn commit_with_sees_latest_state() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = seeded(dir.path());
    let a = article(8, "nyt", 20);
    let seq = store
        .commit_with(|snap| {
            let mut b = CommitBatch::new();
            if !snap.has_url(&a.url) {
                b.push(Record::Article(a.clone()));
            }
            Ok::<_, StoreError>(b)
        })
        .unwrap();
    let again = store
        .commit_with(|snap| {
            let mut b = CommitBatch::new();
            if !snap.has_url(&a.url) {
                b.push(Record::Article(a.clone()));
            }
            Ok::<_, StoreError>(b)
        })
        .unwrap();
    assert_eq!(seq, again);
}
