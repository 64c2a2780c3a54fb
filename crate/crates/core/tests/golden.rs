use chrono::{DateTime, TimeZone, Utc};
use mbd_core::annotation::segment::{segment_sentences, span_text};
use mbd_core::ingestion::{parse_article, AdapterConfig};
use mbd_core::PublisherId;
use serde::Deserialize;

const ARTICLE: &str = include_str!("golden/article.html");
const EXPECTED: &str = include_str!("golden/article.expected.json");
const SEGMENTS: &str = include_str!("golden/segments.txt");

#[derive(Deserialize)]
struct Expected {
    title: String,
    body: String,
    published_at: DateTime<Utc>,
    published_at_fallback: bool,
}

#[test]
fn hand_extracted_article_matches() {
    let want: Expected = serde_json::from_str(EXPECTED).unwrap();
    let cfg = AdapterConfig::generic(PublisherId::new("ap"));
    let collected = Utc.with_ymd_and_hms(2024, 8, 20, 18, 0, 0).unwrap();
    let got = parse_article(ARTICLE, &cfg, collected).unwrap();
    assert_eq!(got.title, want.title);
    assert_eq!(got.body, want.body);
    assert_eq!(got.published_at, want.published_at);
    assert_eq!(got.published_at_fallback, want.published_at_fallback);
}

#[test]
fn hand_segmented_boundaries_match() {
    let want: Vec<&str> = SEGMENTS.lines().filter(|l| !l.trim().is_empty()).collect();
    let body = want.join(" ");
    let got: Vec<String> = segment_sentences(&body).iter().map(|s| span_text(&body, s)).collect();
    assert_eq!(got, want);

    // Same sentences split over paragraphs.
    let body = format!("{}\n\n{}", want[..4].join(" "), want[4..].join(" "));
    let got: Vec<String> = segment_sentences(&body).iter().map(|s| span_text(&body, s)).collect();
    assert_eq!(got, want);
}
