//! Synthetic corpus generator.
//!
//! Produces front pages and article pages in the generic adapter markup,
//! a keyword lexicon for [`MockProvider`](crate::annotation::mock::MockProvider)
//! and the planted ground truth. Every planted label is recoverable by the
//! mock: each label is carried by keywords that appear nowhere else.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::mock::{LabelEntry, Lexicon, TaxonomyEntry};
use crate::ingestion::config::AdapterConfig;
use crate::ingestion::{IntervalId, DEFAULT_INTERVAL_HOURS};
use crate::model::{
    body_hash, default_publisher_ids, Article, ArticleId, ArticleType, LeanLabel, NodeId, OrdinalScale, PublisherId,
    SentenceType, ToneLabel, MAX_INTERVAL_RANK,
};
use crate::taxonomy::{Level, Taxonomy};

/// Sentences carried in the lead and fed to event clustering.
const LEAD_SENTENCES: usize = 5;
const LEXICON_SEED: u64 = 0x006d_6264_5f6c_6578;
const GROUP_VOCAB: usize = 20;
const CORE_WORDS: usize = 4;
const ARTICLE_VOCAB: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Random corpus spread over as many days as needed.
    General,
    /// One day with a 33-article convention story, a 7-article ceasefire
    /// story and unrelated singletons.
    ConventionDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub articles: usize,
    pub start: NaiveDate,
    pub publishers: Vec<PublisherId>,
    pub interval_hours: u32,
    /// Average articles per (publisher, interval) front page.
    pub per_front_page: usize,
    /// Fraction of articles that belong to a multi-article event.
    pub event_share: f64,
    /// Fraction of pages without a timestamp.
    pub missing_time_share: f64,
    /// Chance that a front page re-features the previous interval's lead story.
    pub repost_chance: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, articles: usize) -> Self {
        Self {
            seed,
            articles,
            start: NaiveDate::from_ymd_opt(2024, 8, 19).expect("valid date"),
            publishers: default_publisher_ids(),
            interval_hours: DEFAULT_INTERVAL_HOURS,
            per_front_page: 8,
            event_share: 0.4,
            missing_time_share: 0.02,
            repost_chance: 0.25,
        }
    }
}

/// Labels the generator planted in one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub category_id: NodeId,
    pub topic_id: NodeId,
    pub subtopic_id: NodeId,
    pub article_type: ArticleType,
    pub tone: ToneLabel,
    pub lean: LeanLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSentence {
    pub text: String,
    pub kind: SentenceType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthArticle {
    pub publisher_id: PublisherId,
    pub slug: String,
    /// Canonical URL.
    pub url: String,
    pub interval_id: String,
    pub rank: u8,
    pub title: String,
    pub paragraphs: Vec<Vec<SynthSentence>>,
    pub published_at: DateTime<Utc>,
    /// False when the page omits its timestamp.
    pub has_time: bool,
    pub planted: Planted,
    pub event_group: Option<String>,
}

impl SynthArticle {
    pub fn body(&self) -> String {
        self.paragraphs
            .iter()
            .map(|p| p.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn sentence_types(&self) -> Vec<SentenceType> {
        self.paragraphs.iter().flatten().map(|s| s.kind).collect()
    }

    pub fn article_id(&self) -> ArticleId {
        ArticleId::derive(&self.url, &body_hash(&self.body()))
    }

    /// The record ingestion is expected to produce from this page when
    /// collection happens at the interval start.
    pub fn to_article(&self) -> Article {
        let interval = IntervalId::parse(&self.interval_id).expect("generator emits valid intervals");
        let body = self.body();
        let hash = body_hash(&body);
        Article {
            id: ArticleId::derive(&self.url, &hash),
            publisher_id: self.publisher_id.clone(),
            url: self.url.clone(),
            title: self.title.clone(),
            body,
            published_at: self.published_at,
            collected_at: interval.start(),
            interval_rank: self.rank,
            interval_id: self.interval_id.clone(),
            body_hash: hash,
            published_at_fallback: !self.has_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Link {
    Own(usize),
    Repost(usize),
    Overflow(String),
}

#[derive(Debug, Clone)]
struct FrontPage {
    publisher_id: PublisherId,
    interval: IntervalId,
    links: Vec<Link>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub seed: u64,
    pub preset: Preset,
    pub lexicon: Lexicon,
    pub publishers: Vec<PublisherId>,
    pub intervals: Vec<IntervalId>,
    pub articles: Vec<SynthArticle>,
    pages: Vec<FrontPage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthArticle {
    pub article_id: ArticleId,
    pub url: String,
    pub publisher_id: PublisherId,
    pub interval_id: String,
    pub rank: u8,
    pub published_at: DateTime<Utc>,
    pub published_at_fallback: bool,
    pub category_id: NodeId,
    pub topic_id: NodeId,
    pub subtopic_id: NodeId,
    pub article_type: ArticleType,
    pub tone: ToneLabel,
    pub lean: LeanLabel,
    pub sentence_types: Vec<SentenceType>,
    pub event_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub group: String,
    pub date: NaiveDate,
    pub article_ids: Vec<ArticleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub preset: Preset,
    pub publishers: Vec<PublisherId>,
    pub intervals: Vec<String>,
    pub articles: Vec<TruthArticle>,
    pub events: Vec<TruthEvent>,
    /// Front-page links that point at an article already listed earlier.
    pub reposts: usize,
    /// Links beyond the per-interval cap.
    pub overflow_links: usize,
}

impl GroundTruth {
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "kl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

impl Words {
    fn new(seed: u64, reserved: impl IntoIterator<Item = String>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: reserved.into_iter().collect(),
        }
    }

    fn fresh(&mut self) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..3 {
                w.push_str(ONSETS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            if self.rng.gen_bool(0.5) {
                w.push(['n', 'r', 's', 'x'][self.rng.gen_range(0..4)]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

const HORSE_RACE: &str = "politics.election-2024.horse-race";
const CONVENTIONS: &str = "politics.election-2024.conventions";
const GAZA: &str = "international.middle-east.gaza";

/// Keyword lexicon shared by every generated corpus.
pub fn builtin_lexicon() -> Lexicon {
    let taxonomy = Taxonomy::seed();
    let mut words = Words::new(LEXICON_SEED, ["poll", "ballot", "swing", "state"].map(String::from));
    let mut entries = Vec::new();
    for node in taxonomy.nodes().iter().filter(|n| n.level == Level::Subtopic) {
        let path: Vec<String> = taxonomy
            .path_to(&node.id)
            .expect("seed node has a path")
            .iter()
            .map(|n| n.id.to_string())
            .collect();
        let keywords = if node.id.as_str() == HORSE_RACE {
            vec!["poll".to_string(), "ballot".into(), "swing state".into()]
        } else {
            vec![words.fresh()]
        };
        entries.push(TaxonomyEntry { path, keywords });
    }
    let mut labelled = |labels: &[&str]| -> Vec<LabelEntry> {
        labels
            .iter()
            .map(|l| LabelEntry {
                label: (*l).to_string(),
                keywords: vec![words.fresh()],
            })
            .collect()
    };
    let article_type = labelled(&[ArticleType::NewsAnalysis.label(), ArticleType::Opinion.label()]);
    let tone = labelled(&non_neutral(&ToneLabel::ALL).iter().map(|t| t.label()).collect::<Vec<_>>());
    let lean = labelled(&non_neutral(&LeanLabel::ALL).iter().map(|t| t.label()).collect::<Vec<_>>());
    Lexicon {
        taxonomy: entries,
        article_type,
        tone,
        lean,
        sentence_type: vec![
            LabelEntry {
                label: "quote".into(),
                keywords: vec!["said".into()],
            },
            LabelEntry {
                label: "opinion".into(),
                keywords: vec!["should".into()],
            },
        ],
    }
}

fn non_neutral<T: OrdinalScale>(all: &[T; 5]) -> Vec<T> {
    all.iter().copied().filter(|t| t.to_numeric() != 0).collect()
}

fn lexicon_words(lex: &Lexicon) -> BTreeSet<String> {
    let entries = lex.taxonomy.iter().flat_map(|e| &e.keywords).chain(
        [&lex.article_type, &lex.tone, &lex.lean, &lex.sentence_type]
            .into_iter()
            .flatten()
            .flat_map(|e| &e.keywords),
    );
    entries
        .flat_map(|k| k.split_whitespace().map(str::to_lowercase))
        .collect()
}

fn keyword_of(entries: &[LabelEntry], label: &str) -> Option<String> {
    entries.iter().find(|e| e.label == label).map(|e| e.keywords[0].clone())
}

/// Publisher-specific lean weights indexed by numeric value + 2.
fn lean_weights(p: &PublisherId) -> [u32; 5] {
    match p.as_str() {
        "breitbart" => [0, 1, 3, 6, 10],
        "fox" => [1, 2, 5, 7, 5],
        "huffpost" => [10, 6, 3, 1, 0],
        "guardian" | "cnn" => [5, 7, 5, 2, 1],
        "nyt" | "wapo" => [3, 7, 6, 3, 1],
        _ => [1, 3, 12, 3, 1],
    }
}

fn weighted<R: Rng>(rng: &mut R, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut roll = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if roll < *w {
            return i;
        }
        roll -= w;
    }
    weights.len() - 1
}

struct Draft {
    publisher_id: PublisherId,
    interval: IntervalId,
    group: Option<usize>,
    subtopic: Option<NodeId>,
}

struct Group {
    id: String,
    vocab: Vec<String>,
    subtopic: NodeId,
}

const DNC_VOCAB: [&str; GROUP_VOCAB] = [
    "convention", "harris", "chicago", "delegates", "nomination", "walz", "democratic", "arena", "speech",
    "roll", "crowd", "keynote", "stage", "ticket", "nominee", "celebration", "podium", "acceptance",
    "michelle", "obama",
];

const CEASEFIRE_VOCAB: [&str; GROUP_VOCAB] = [
    "ceasefire", "gaza", "hostage", "negotiators", "cairo", "qatar", "truce", "talks", "israel", "hamas",
    "mediators", "proposal", "release", "prisoners", "blinken", "egypt", "framework", "exchange",
    "fighting", "envoy",
];

pub fn convention_day_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 8, 21).expect("valid date")
}

pub fn generate(config: &SynthConfig, preset: Preset) -> Corpus {
    let lexicon = builtin_lexicon();
    let taxonomy = Taxonomy::seed();
    let subtopics: Vec<NodeId> = taxonomy
        .nodes()
        .iter()
        .filter(|n| n.level == Level::Subtopic)
        .map(|n| n.id.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reserved: BTreeSet<String> = lexicon_words(&lexicon);
    reserved.extend(DNC_VOCAB.iter().chain(&CEASEFIRE_VOCAB).map(|s| s.to_string()));
    let mut words = Words::new(config.seed ^ 0x5eed, reserved);
    let hours = config.interval_hours.max(1);
    let per_day = (24 / hours).max(1);
    let publishers = if config.publishers.is_empty() {
        default_publisher_ids()
    } else {
        config.publishers.clone()
    };

    let (start, days, drafts, groups) = match preset {
        Preset::General => plan_general(config, &publishers, per_day, hours, &subtopics, &mut rng, &mut words),
        Preset::ConventionDay => plan_convention_day(config, &publishers, per_day, hours, &mut rng),
    };

    let mut intervals = Vec::new();
    for d in 0..days {
        let day = start + Duration::days(i64::from(d));
        for k in 0..per_day {
            let at = day.and_hms_opt(k * hours, 0, 0).expect("valid hour").and_utc();
            intervals.push(IntervalId::containing(at, hours));
        }
    }

    // Slots keyed by (publisher, interval); order inside a slot is the rank.
    let mut slots: BTreeMap<(PublisherId, IntervalId), Vec<usize>> = BTreeMap::new();
    for (i, d) in drafts.iter().enumerate() {
        slots.entry((d.publisher_id.clone(), d.interval.clone())).or_default().push(i);
    }
    for v in slots.values_mut() {
        v.shuffle(&mut rng);
    }

    let mut pages = Vec::new();
    let mut rank_of = vec![0u8; drafts.len()];
    for p in &publishers {
        let mut previous: Option<usize> = None;
        for iv in &intervals {
            let own = slots.get(&(p.clone(), iv.clone())).cloned().unwrap_or_default();
            let mut links: Vec<Link> = own.iter().map(|i| Link::Own(*i)).collect();
            if let Some(prev) = previous {
                if links.len() < usize::from(MAX_INTERVAL_RANK) && rng.gen_bool(config.repost_chance) {
                    let at = rng.gen_range(0..=links.len());
                    links.insert(at, Link::Repost(prev));
                }
            }
            if links.len() == usize::from(MAX_INTERVAL_RANK) && rng.gen_bool(0.5) {
                for _ in 0..rng.gen_range(1..=5) {
                    links.push(Link::Overflow(format!("{}-{}", words.fresh(), words.fresh())));
                }
            }
            for (r, l) in links.iter().enumerate() {
                if let Link::Own(i) = l {
                    rank_of[*i] = r as u8 + 1;
                }
            }
            if let Some(first) = own.iter().find(|i| rank_of[**i] == 1).or(own.first()) {
                previous = Some(*first);
            }
            pages.push(FrontPage {
                publisher_id: p.clone(),
                interval: iv.clone(),
                links,
            });
        }
    }

    let mut articles = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.iter().enumerate() {
        let group = d.group.map(|g| &groups[g]);
        articles.push(write_article(
            i,
            d,
            group,
            rank_of[i],
            hours,
            config,
            &lexicon,
            &taxonomy,
            &subtopics,
            &mut rng,
            &mut words,
        ));
    }

    Corpus {
        seed: config.seed,
        preset,
        lexicon,
        publishers,
        intervals,
        articles,
        pages,
    }
}

type Plan = (NaiveDate, u32, Vec<Draft>, Vec<Group>);

fn plan_general(
    config: &SynthConfig,
    publishers: &[PublisherId],
    per_day: u32,
    hours: u32,
    subtopics: &[NodeId],
    rng: &mut ChaCha8Rng,
    words: &mut Words,
) -> Plan {
    let per_page = config.per_front_page.clamp(1, usize::from(MAX_INTERVAL_RANK));
    let slots_per_day = publishers.len() * per_day as usize;
    let days = config.articles.div_ceil(slots_per_day * per_page).max(1) as u32;
    let total_slots = slots_per_day * days as usize;
    let mut fill = vec![0usize; total_slots];
    let mut drafts = Vec::with_capacity(config.articles);
    // One article per front page first, so no page is empty while articles last.
    let mut first_pass: Vec<usize> = (0..total_slots).collect();
    first_pass.shuffle(rng);
    for n in 0..config.articles {
        let mut s = first_pass.get(n).copied().unwrap_or_else(|| rng.gen_range(0..total_slots));
        while fill[s] >= usize::from(MAX_INTERVAL_RANK) {
            s = (s + 1) % total_slots;
        }
        fill[s] += 1;
        let day = s / slots_per_day;
        let rest = s % slots_per_day;
        let publisher = &publishers[rest / per_day as usize];
        let k = (rest % per_day as usize) as u32;
        let at = (config.start + Duration::days(day as i64))
            .and_hms_opt(k * hours, 0, 0)
            .expect("valid hour")
            .and_utc();
        drafts.push(Draft {
            publisher_id: publisher.clone(),
            interval: IntervalId::containing(at, hours),
            group: None,
            subtopic: None,
        });
    }

    let mut groups = Vec::new();
    for day in 0..days {
        let date = config.start + Duration::days(i64::from(day));
        let mut members: Vec<usize> = (0..drafts.len())
            .filter(|i| drafts[*i].interval.start().date_naive() == date)
            .collect();
        members.shuffle(rng);
        let mut budget = (members.len() as f64 * config.event_share).round() as usize;
        let mut cursor = 0;
        while budget >= 2 && cursor + 2 <= members.len() {
            let size = rng.gen_range(2..=8).min(budget).min(members.len() - cursor);
            if size < 2 {
                break;
            }
            let g = groups.len();
            let subtopic = subtopics.choose(rng).expect("seed has subtopics").clone();
            for m in &members[cursor..cursor + size] {
                drafts[*m].group = Some(g);
                drafts[*m].subtopic = Some(subtopic.clone());
            }
            groups.push(Group {
                id: format!("g{g:03}"),
                vocab: words.many(GROUP_VOCAB),
                subtopic,
            });
            cursor += size;
            budget -= size;
        }
    }
    (config.start, days, drafts, groups)
}

fn plan_convention_day(config: &SynthConfig, publishers: &[PublisherId], per_day: u32, hours: u32, rng: &mut ChaCha8Rng) -> Plan {
    let date = convention_day_date();
    let mut drafts = Vec::new();
    let interval_at = |k: u32| IntervalId::containing(date.and_hms_opt(k * hours, 0, 0).expect("valid hour").and_utc(), hours);
    let groups = vec![
        Group {
            id: "convention".into(),
            vocab: DNC_VOCAB.iter().map(|s| s.to_string()).collect(),
            subtopic: NodeId::new(CONVENTIONS),
        },
        Group {
            id: "ceasefire".into(),
            vocab: CEASEFIRE_VOCAB.iter().map(|s| s.to_string()).collect(),
            subtopic: NodeId::new(GAZA),
        },
    ];
    // 33 convention stories: four each from the first three publishers,
    // three from the rest. Seven ceasefire stories from seven outlets.
    for (i, p) in publishers.iter().enumerate() {
        let n = if publishers.len() == 10 { if i < 3 { 4 } else { 3 } } else { 33 / publishers.len() + usize::from(i < 33 % publishers.len()) };
        for _ in 0..n {
            drafts.push(Draft {
                publisher_id: p.clone(),
                interval: interval_at(rng.gen_range(0..per_day)),
                group: Some(0),
                subtopic: Some(groups[0].subtopic.clone()),
            });
        }
    }
    let ceasefire: Vec<&PublisherId> = {
        let named: Vec<&PublisherId> = ["ap", "cnn", "fox", "guardian", "nyt", "wapo", "wsj"]
            .iter()
            .filter_map(|s| publishers.iter().find(|p| p.as_str() == *s))
            .collect();
        if named.len() == 7 {
            named
        } else {
            publishers.iter().cycle().take(7).collect()
        }
    };
    for p in ceasefire {
        drafts.push(Draft {
            publisher_id: p.clone(),
            interval: interval_at(rng.gen_range(0..per_day)),
            group: Some(1),
            subtopic: Some(groups[1].subtopic.clone()),
        });
    }
    let singletons = config.articles.saturating_sub(40);
    for i in 0..singletons {
        drafts.push(Draft {
            publisher_id: publishers[i % publishers.len()].clone(),
            interval: interval_at(rng.gen_range(0..per_day)),
            group: None,
            subtopic: None,
        });
    }
    (date, 1, drafts, groups)
}

fn sentence(kind: SentenceType, pool: &[String], keyword: Option<&str>, rng: &mut ChaCha8Rng) -> SynthSentence {
    let mut pick = || pool.choose(rng).expect("non-empty pool").clone();
    let (a, b, c, d, e) = (pick(), pick(), pick(), pick(), pick());
    let lead = keyword.map(str::to_string).unwrap_or_else(|| a.clone());
    let text = match kind {
        SentenceType::Fact => match rng.gen_range(0..3) {
            0 => format!("The {lead} {b} and {c} were {d} on the {e}."),
            1 => format!("{} {b} has {c} the {d} {e}.", capitalize(&lead)),
            _ => format!("The {lead} {b} {c} after the {d} {e}."),
        },
        SentenceType::Quote => format!("\"The {lead} {b} {c},\" said {} {}.", capitalize(&d), capitalize(&e)),
        SentenceType::Opinion => format!("The {lead} {b} should {c} the {d} {e}."),
    };
    SynthSentence { text, kind }
}

fn lead_kind(rng: &mut ChaCha8Rng, first: bool) -> SentenceType {
    if first {
        return SentenceType::Fact;
    }
    match rng.gen_range(0..10) {
        0 | 1 => SentenceType::Quote,
        2 | 3 => SentenceType::Opinion,
        _ => SentenceType::Fact,
    }
}

#[allow(clippy::too_many_arguments)]
fn write_article(
    index: usize,
    draft: &Draft,
    group: Option<&Group>,
    rank: u8,
    hours: u32,
    config: &SynthConfig,
    lexicon: &Lexicon,
    taxonomy: &Taxonomy,
    subtopics: &[NodeId],
    rng: &mut ChaCha8Rng,
    words: &mut Words,
) -> SynthArticle {
    let own = words.many(ARTICLE_VOCAB);
    let lead_pool: Vec<String> = group.map(|g| g.vocab.clone()).unwrap_or_else(|| own.clone());
    let subtopic = draft
        .subtopic
        .clone()
        .unwrap_or_else(|| subtopics.choose(rng).expect("seed has subtopics").clone());
    let path = taxonomy.path_to(&subtopic).expect("seed subtopic");
    let tone = ToneLabel::ALL[weighted(rng, &[2, 4, 8, 4, 2])];
    let lean = LeanLabel::ALL[weighted(rng, &lean_weights(&draft.publisher_id))];
    let article_type = ArticleType::ALL[weighted(rng, &[6, 2, 2])];

    let title_words: Vec<String> = match group {
        Some(g) => {
            let mut t: Vec<String> = g.vocab[..CORE_WORDS].to_vec();
            t.extend(g.vocab[CORE_WORDS..].choose_multiple(rng, 2).cloned());
            t.shuffle(rng);
            t
        }
        None => own[..6].to_vec(),
    };
    let mut title = title_words.join(" ");
    title = capitalize(&title);

    let mut sentences: Vec<SynthSentence> = (0..LEAD_SENTENCES)
        .map(|i| sentence(lead_kind(rng, i == 0), &lead_pool, None, rng))
        .collect();

    let mut tail = Vec::new();
    let topic_kw = lexicon
        .taxonomy
        .iter()
        .find(|e| e.path.last().map(String::as_str) == Some(subtopic.as_str()))
        .map(|e| e.keywords.clone())
        .unwrap_or_default();
    for i in 0..3 {
        let kw = &topic_kw[i % topic_kw.len().max(1)];
        tail.push(sentence(SentenceType::Fact, &own, Some(kw), rng));
    }
    let labels = [
        keyword_of(&lexicon.tone, tone.label()),
        keyword_of(&lexicon.lean, lean.label()),
        keyword_of(&lexicon.article_type, article_type.label()),
    ];
    for kw in labels.iter().flatten() {
        for _ in 0..2 {
            tail.push(sentence(SentenceType::Fact, &own, Some(kw), rng));
        }
    }
    for _ in 0..rng.gen_range(0..=4) {
        let kind = lead_kind(rng, false);
        tail.push(sentence(kind, &own, None, rng));
    }
    tail.shuffle(rng);
    sentences.extend(tail);

    let mut paragraphs = Vec::new();
    let mut rest = sentences.as_slice();
    while !rest.is_empty() {
        let n = rng.gen_range(2..=4).min(rest.len());
        paragraphs.push(rest[..n].to_vec());
        rest = &rest[n..];
    }

    let start = draft.interval.start();
    let has_time = !rng.gen_bool(config.missing_time_share.clamp(0.0, 1.0));
    let published_at = if has_time {
        start + Duration::minutes(rng.gen_range(0..i64::from(hours) * 60))
    } else {
        start
    };
    let slug = format!("{}-{}-{index:05}", own[0], own[1]);
    let date = start.date_naive();
    let url = format!(
        "https://{}.example/{}/{slug}",
        draft.publisher_id,
        date.format("%Y/%m/%d")
    );
    SynthArticle {
        publisher_id: draft.publisher_id.clone(),
        slug,
        url,
        interval_id: draft.interval.as_str().to_string(),
        rank,
        title,
        paragraphs,
        published_at,
        has_time,
        planted: Planted {
            category_id: path[0].id.clone(),
            topic_id: path[1].id.clone(),
            subtopic_id: path[2].id.clone(),
            article_type,
            tone,
            lean,
        },
        event_group: group.map(|g| g.id.clone()),
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Corpus {
    pub fn ground_truth(&self) -> GroundTruth {
        let articles: Vec<TruthArticle> = self
            .articles
            .iter()
            .map(|a| TruthArticle {
                article_id: a.article_id(),
                url: a.url.clone(),
                publisher_id: a.publisher_id.clone(),
                interval_id: a.interval_id.clone(),
                rank: a.rank,
                published_at: a.published_at,
                published_at_fallback: !a.has_time,
                category_id: a.planted.category_id.clone(),
                topic_id: a.planted.topic_id.clone(),
                subtopic_id: a.planted.subtopic_id.clone(),
                article_type: a.planted.article_type,
                tone: a.planted.tone,
                lean: a.planted.lean,
                sentence_types: a.sentence_types(),
                event_group: a.event_group.clone(),
            })
            .collect();
        let mut events: BTreeMap<String, TruthEvent> = BTreeMap::new();
        for a in &self.articles {
            if let Some(g) = &a.event_group {
                events
                    .entry(g.clone())
                    .or_insert_with(|| TruthEvent {
                        group: g.clone(),
                        date: a.published_at.date_naive(),
                        article_ids: Vec::new(),
                    })
                    .article_ids
                    .push(a.article_id());
            }
        }
        for e in events.values_mut() {
            e.article_ids.sort();
        }
        let count = |f: fn(&Link) -> bool| self.pages.iter().flat_map(|p| &p.links).filter(|l| f(l)).count();
        GroundTruth {
            seed: self.seed,
            preset: self.preset,
            publishers: self.publishers.clone(),
            intervals: self.intervals.iter().map(|i| i.as_str().to_string()).collect(),
            articles,
            events: events.into_values().collect(),
            reposts: count(|l| matches!(l, Link::Repost(_))),
            overflow_links: count(|l| matches!(l, Link::Overflow(_))),
        }
    }

    /// Records ingestion should store, in generation order.
    pub fn expected_articles(&self) -> Vec<Article> {
        self.articles.iter().map(SynthArticle::to_article).collect()
    }

    pub fn adapters(&self) -> Vec<AdapterConfig> {
        self.publishers.iter().cloned().map(AdapterConfig::generic).collect()
    }

    fn front_page_html(&self, page: &FrontPage, rng: &mut ChaCha8Rng) -> String {
        let mut items = String::new();
        for link in &page.links {
            let (href, title) = match link {
                Link::Own(i) | Link::Repost(i) => {
                    let a = &self.articles[*i];
                    let path = a.url.split_once(".example").map(|(_, p)| p).unwrap_or(&a.url);
                    let href = match rng.gen_range(0..4) {
                        0 => format!("{path}?utm_source=frontpage&utm_medium=web"),
                        1 => format!("{}#comments", a.url),
                        2 => path.to_string(),
                        _ => a.url.clone(),
                    };
                    (href, a.title.clone())
                }
                Link::Overflow(slug) => (format!("/more/{slug}"), slug.replace('-', " ")),
            };
            items.push_str(&format!(
                "      <li><a class=\"story\" href=\"{}\">{}</a></li>\n",
                escape(&href),
                escape(&title)
            ));
        }
        format!(
            "<!doctype html>\n<html>\n<head><title>{p} front page</title></head>\n<body>\n  <nav><a href=\"/\">Home</a> <a href=\"/politics\">Politics</a> <a href=\"/world\">World</a></nav>\n  <main>\n    <ol class=\"top-stories\">\n{items}    </ol>\n    <aside class=\"related\"><a class=\"promo\" href=\"/subscribe\">Subscribe</a></aside>\n  </main>\n</body>\n</html>\n",
            p = page.publisher_id
        )
    }

    fn article_html(&self, a: &SynthArticle, rng: &mut ChaCha8Rng) -> String {
        let mut body = String::new();
        for (i, p) in a.paragraphs.iter().enumerate() {
            let mut texts: Vec<String> = p.iter().map(|s| escape(&s.text)).collect();
            if texts.len() > 1 && rng.gen_bool(0.1) {
                texts[0].push_str(" <span class=\"ad\">Sponsored content</span>");
            }
            body.push_str(&format!("      <p>{}</p>\n", texts.join(" ")));
            if i == 0 {
                body.push_str("      <div class=\"ad\">Advertisement</div>\n");
            }
        }
        let time = if a.has_time {
            format!(
                "    <time datetime=\"{}\">{}</time>\n",
                a.published_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                a.published_at.format("%B %-d, %Y")
            )
        } else {
            String::new()
        };
        format!(
            "<!doctype html>\n<html>\n<head><title>{t} | {p}</title></head>\n<body>\n  <nav><a href=\"/\">Home</a></nav>\n  <article>\n    <h1 class=\"headline\">{t}</h1>\n    <p class=\"byline\">By Staff Writer</p>\n{time}    <div class=\"article-body\">\n{body}    </div>\n    <div class=\"related\"><a href=\"/\">More stories</a></div>\n  </article>\n</body>\n</html>\n",
            t = escape(&a.title),
            p = a.publisher_id
        )
    }

    /// Writes `<dir>/<publisher>/<interval>/frontpage.html`, article pages,
    /// `lexicon.toml`, `ground_truth.json` and `adapters/<publisher>.toml`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x68746d6c);
        std::fs::create_dir_all(dir)?;
        for page in &self.pages {
            let idir = dir.join(page.publisher_id.as_str()).join(page.interval.as_str());
            let adir = idir.join("articles");
            std::fs::create_dir_all(&adir)?;
            std::fs::write(idir.join("frontpage.html"), self.front_page_html(page, &mut rng))?;
            for link in &page.links {
                if let Link::Own(i) | Link::Repost(i) = link {
                    let a = &self.articles[*i];
                    std::fs::write(adir.join(format!("{}.html", a.slug)), self.article_html(a, &mut rng))?;
                }
            }
        }
        let adapters = dir.join("adapters");
        std::fs::create_dir_all(&adapters)?;
        for cfg in self.adapters() {
            std::fs::write(adapters.join(format!("{}.toml", cfg.publisher_id)), cfg.to_toml())?;
        }
        std::fs::write(dir.join("lexicon.toml"), self.lexicon.to_toml())?;
        let truth = serde_json::to_string_pretty(&self.ground_truth()).map_err(io::Error::other)?;
        std::fs::write(dir.join("ground_truth.json"), truth)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::segment::{segment_sentences, span_text};

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate(&SynthConfig::new(7, 200), Preset::General);
        let b = generate(&SynthConfig::new(7, 200), Preset::General);
        assert_eq!(a.ground_truth(), b.ground_truth());
        let c = generate(&SynthConfig::new(8, 200), Preset::General);
        assert_ne!(a.ground_truth(), c.ground_truth());
    }

    #[test]
    fn front_pages_respect_the_cap_and_ids_are_unique() {
        let mut cfg = SynthConfig::new(3, 900);
        cfg.per_front_page = 18;
        let c = generate(&cfg, Preset::General);
        let mut per: BTreeMap<(&PublisherId, &str), usize> = BTreeMap::new();
        for a in &c.articles {
            *per.entry((&a.publisher_id, a.interval_id.as_str())).or_default() += 1;
            assert!((1..=20).contains(&a.rank));
        }
        assert!(per.values().all(|n| *n <= 20));
        let ids: HashSet<ArticleId> = c.articles.iter().map(SynthArticle::article_id).collect();
        assert_eq!(ids.len(), c.articles.len());
    }

    #[test]
    fn sentences_segment_as_planted() {
        let c = generate(&SynthConfig::new(11, 120), Preset::General);
        for a in &c.articles {
            let body = a.body();
            let spans = segment_sentences(&body);
            let got: Vec<String> = spans.iter().map(|s| span_text(&body, s)).collect();
            let want: Vec<String> = a.paragraphs.iter().flatten().map(|s| s.text.clone()).collect();
            assert_eq!(got, want, "{}", a.slug);
        }
    }

    #[test]
    fn convention_day_shape() {
        let c = generate(&SynthConfig::new(1, 60), Preset::ConventionDay);
        let t = c.ground_truth();
        let sizes: BTreeMap<&str, usize> = t.events.iter().map(|e| (e.group.as_str(), e.article_ids.len())).collect();
        assert_eq!(sizes["convention"], 33);
        assert_eq!(sizes["ceasefire"], 7);
        assert_eq!(t.articles.len(), 60);
        assert!(t.articles.iter().all(|a| a.published_at.date_naive() == convention_day_date()));
    }

    #[test]
    fn lexicon_words_do_not_leak_into_leads() {
        let c = generate(&SynthConfig::new(5, 150), Preset::General);
        let lex = lexicon_words(&c.lexicon);
        for a in &c.articles {
            for s in a.paragraphs.iter().flatten().take(LEAD_SENTENCES) {
                for w in crate::annotation::mock::word_tokens(&s.text) {
                    if w == "said" || w == "should" {
                        continue;
                    }
                    assert!(!lex.contains(&w), "{w} in {}", s.text);
                }
            }
        }
    }
}
