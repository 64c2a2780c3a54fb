use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use scraper::{ElementRef, Html, Node, Selector};

use super::config::AdapterConfig;
use super::IngestError;
use crate::model::normalize_whitespace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedArticle {
    pub title: String,
    /// Paragraphs separated by a blank line.
    pub body: String,
    pub published_at: DateTime<Utc>,
    pub published_at_fallback: bool,
}

fn selectors(rules: &[String]) -> Vec<Selector> {
    rules.iter().filter_map(|s| Selector::parse(s).ok()).collect()
}

fn push_text(el: ElementRef<'_>, strip: &[Selector], out: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(_) => {
                let Some(e) = ElementRef::wrap(child) else { continue };
                if strip.iter().any(|s| s.matches(&e)) {
                    continue;
                }
                if matches!(e.value().name(), "script" | "style" | "noscript") {
                    continue;
                }
                out.push(' ');
                push_text(e, strip, out);
                out.push(' ');
            }
            _ => {}
        }
    }
}

fn clean_text(el: ElementRef<'_>, strip: &[Selector]) -> String {
    let mut s = String::new();
    push_text(el, strip, &mut s);
    normalize_whitespace(&s)
}

/// Anchor targets from the front page in rule order, first occurrence only.
pub fn extract_links(html: &str, cfg: &AdapterConfig) -> Vec<String> {
    let doc = Html::parse_document(html);
    let mut out: Vec<String> = Vec::new();
    for sel in selectors(&cfg.link_selectors) {
        for el in doc.select(&sel) {
            if let Some(href) = el.value().attr(&cfg.link_attr) {
                let href = href.trim().to_string();
                if !href.is_empty() && !out.contains(&href) {
                    out.push(href);
                }
            }
        }
    }
    out
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_rfc2822(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

/// Applies the adapter's title, body and timestamp rules. A missing or
/// unparsable timestamp falls back to `collected_at` and sets the flag.
pub fn parse_article(html: &str, cfg: &AdapterConfig, collected_at: DateTime<Utc>) -> Result<ParsedArticle, IngestError> {
    if html.trim().is_empty() {
        return Err(IngestError::ExtractionFailed("empty document".into()));
    }
    let doc = Html::parse_document(html);
    let strip = selectors(&cfg.strip_selectors);

    let title = selectors(&cfg.title_selectors)
        .iter()
        .find_map(|s| {
            doc.select(s)
                .map(|e| clean_text(e, &strip))
                .find(|t| !t.is_empty())
        })
        .ok_or_else(|| IngestError::ExtractionFailed("title rules matched nothing".into()))?;

    let mut paragraphs: Vec<String> = Vec::new();
    for s in selectors(&cfg.body_selectors) {
        paragraphs.extend(doc.select(&s).map(|e| clean_text(e, &strip)).filter(|t| !t.is_empty()));
        if !paragraphs.is_empty() {
            break;
        }
    }
    if paragraphs.is_empty() {
        return Err(IngestError::ExtractionFailed("body rules matched nothing".into()));
    }

    let stamp = selectors(&cfg.time_selectors).iter().find_map(|s| {
        doc.select(s).find_map(|e| {
            let raw = match &cfg.time_attr {
                Some(attr) => e.value().attr(attr).map(str::to_string),
                None => Some(e.text().collect::<String>()),
            };
            raw.and_then(|r| parse_timestamp(&r))
        })
    });

    Ok(ParsedArticle {
        title,
        body: paragraphs.join("\n\n"),
        published_at: stamp.unwrap_or(collected_at),
        published_at_fallback: stamp.is_none(),
    })
}
