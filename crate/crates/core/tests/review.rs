use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use mbd_core::pipeline::run_fixture_pipeline;
use mbd_core::review::{
    agreement_report, audit_log_jsonl, create_review_tasks, record_verdict, sample_for_review, AuditEntry,
    Dimension, Overrides, ReviewError, ReviewWeek, TaskStatus, Verdict,
};
use mbd_core::synth::{generate, Preset, SynthConfig};
use mbd_core::{OrdinalScale, Provenance, PublisherId, Store, ToneLabel};

async fn populated(dir: &std::path::Path) -> (Store, ReviewWeek) {
    let corpus = generate(&SynthConfig::new(17, 300), Preset::General);
    let fixtures = tempfile::tempdir().unwrap();
    corpus.write(fixtures.path()).unwrap();
    let store = Store::open(dir).unwrap();
    let now = Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap();
    run_fixture_pipeline(&store, &corpus, fixtures.path(), now).await.unwrap();
    let first = corpus.articles.iter().map(|a| a.published_at.date_naive()).min().unwrap();
    (store, ReviewWeek::containing(first))
}

#[tokio::test(flavor = "multi_thread")]
async fn sample_is_proportional_seeded_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let (store, week) = populated(dir.path()).await;
    let snap = store.snapshot();

    let mut strata: BTreeMap<PublisherId, usize> = BTreeMap::new();
    for a in snap.articles() {
        if week.contains(a.published_date()) {
            *strata.entry(a.publisher_id.clone()).or_default() += 1;
        }
    }
    let population: usize = strata.values().sum();
    let n = 23;
    assert!(population > n);

    // Hamilton apportionment, ties to the earlier slug.
    let mut want: BTreeMap<PublisherId, usize> = BTreeMap::new();
    let mut rema: Vec<(f64, PublisherId)> = Vec::new();
    for (p, c) in &strata {
        let q = n as f64 * *c as f64 / population as f64;
        want.insert(p.clone(), q.floor() as usize);
        rema.push((q - q.floor(), p.clone()));
    }
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let short = n - want.values().sum::<usize>();
    for (_, p) in rema.into_iter().take(short) {
        *want.get_mut(&p).unwrap() += 1;
    }

    let a = sample_for_review(&snap, week, n, 4).unwrap();
    let b = sample_for_review(&snap, week, n, 4).unwrap();
    assert_eq!(a.tasks, b.tasks);
    assert_eq!(a.shortfall, None);
    let mut got: BTreeMap<PublisherId, usize> = BTreeMap::new();
    for t in &a.tasks {
        assert!(week.contains(snap.article(&t.article_id).unwrap().published_date()));
        assert_eq!(t.status, TaskStatus::Pending);
        *got.entry(t.publisher_id.clone()).or_default() += 1;
    }
    want.retain(|_, v| *v > 0);
    assert_eq!(got, want);

    create_review_tasks(&store, week, n, 4).unwrap();
    let rest = create_review_tasks(&store, week, population, 5).unwrap();
    assert_eq!(rest.tasks.len(), population - n);
    assert_eq!(rest.shortfall, Some(n));
    let first: std::collections::BTreeSet<_> = a.tasks.iter().map(|t| &t.article_id).collect();
    assert!(rest.tasks.iter().all(|t| !first.contains(&t.article_id)));
    assert!(matches!(sample_for_review(&snap, week, 0, 1), Err(ReviewError::InvalidSampleSize)));
}

#[tokio::test(flavor = "multi_thread")]
async fn verdicts_update_labels_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let (store, week) = populated(dir.path()).await;
    let tasks = create_review_tasks(&store, week, 6, 2).unwrap().tasks;
    let at = Utc.with_ymd_and_hms(2024, 9, 2, 12, 0, 0).unwrap();

    let before = store.snapshot().annotation(&tasks[0].article_id).unwrap().clone();
    let out = record_verdict(&store, &tasks[0].id, &Verdict::Approve, "alice", at).unwrap();
    assert_eq!(out.task.status, TaskStatus::Approved);
    assert_eq!(*store.snapshot().annotation(&tasks[0].article_id).unwrap(), before);

    let seq = store.sequence();
    let again = record_verdict(&store, &tasks[0].id, &Verdict::Approve, "bob", at);
    assert!(matches!(again, Err(ReviewError::TaskAlreadyResolved(_))));
    assert_eq!(store.sequence(), seq);

    let art = &tasks[1].article_id;
    let old = store.snapshot().annotation(art).unwrap().tone;
    let new_tone = ToneLabel::ALL.into_iter().find(|t| *t != old).unwrap();
    let ov = Verdict::Override(Overrides {
        tone: Some(new_tone),
        ..Overrides::default()
    });
    let out = record_verdict(&store, &tasks[1].id, &ov, "alice", at).unwrap();
    assert_eq!(out.task.overridden, vec![Dimension::Tone]);
    let snap = store.snapshot();
    let cur = snap.annotation(art).unwrap();
    assert_eq!(cur.tone, new_tone);
    assert_eq!(cur.provenance, Provenance::HumanOverride);
    let history = snap.annotation_history(art);
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].tone, old);
    assert_eq!(history[0].provenance, Provenance::Llm);

    let _ = record_verdict(&store, &tasks[2].id, &Verdict::Approve, "carol", at).unwrap();
    let cur2 = store.snapshot().annotation(&tasks[3].article_id).unwrap().tone;
    let unchanged = Verdict::Override(Overrides {
        tone: Some(cur2),
        ..Overrides::default()
    });
    assert!(matches!(
        record_verdict(&store, &tasks[3].id, &unchanged, "carol", at),
        Err(ReviewError::InvalidOverrideLabel(_))
    ));

    let report = agreement_report(&store.snapshot(), at.date_naive(), at.date_naive()).unwrap();
    assert_eq!(report.resolved, 3);
    let tone = report.dimensions.iter().find(|d| d.dimension == Dimension::Tone).unwrap();
    assert!((tone.rate - 1.0 / 3.0).abs() < 1e-12);
    assert!(matches!(
        agreement_report(&store.snapshot(), week.first_day(), week.first_day()),
        Err(ReviewError::EmptyPeriod)
    ));

    let jsonl = audit_log_jsonl(&store.snapshot());
    let entries: Vec<AuditEntry> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 3);
    assert_eq!(entries[1].before.tone, old);
    assert_eq!(entries[1].after.as_ref().unwrap().tone, new_tone);
    assert!(entries[0].after.is_none());

    drop(store);
    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(audit_log_jsonl(&reopened.snapshot()), jsonl);
    assert_eq!(reopened.snapshot().annotation(art).unwrap().tone, new_tone);
}
