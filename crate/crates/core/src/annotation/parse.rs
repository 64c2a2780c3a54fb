//! Strict parsing of provider responses.
//!
//! A label answer is taken from the last non-empty line. If that line is not
//! itself a label, the text after its last colon is tried, so
//! `The answer is: Opinion` parses while free prose does not.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{fold_label, ArticleType, LeanLabel, NodeId, OrdinalScale, SentenceType, ToneLabel};
use crate::taxonomy::TaxonomyNode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unparsable response: {0:?}")]
    UnparsableResponse(String),
    #[error("label {0:?} is not among the candidates")]
    InvalidLabel(String),
}

/// What a label answer may be chosen from.
#[derive(Debug, Clone, Copy)]
pub enum LabelSet<'a> {
    Nodes(&'a [&'a TaxonomyNode]),
    ArticleType,
    Tone,
    Lean,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Node(NodeId),
    ArticleType(ArticleType),
    Tone(ToneLabel),
    Lean(LeanLabel),
}

/// Longest answer token still treated as a label attempt rather than prose.
const MAX_ANSWER_CHARS: usize = 80;

fn strip_decoration(s: &str) -> &str {
    s.trim()
        .trim_start_matches(['-', '*', '>', '#'])
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '“' | '”' | '*'))
        .trim_end_matches(['.', '!'])
        .trim()
}

fn match_label(token: &str, set: LabelSet<'_>) -> Option<Label> {
    match set {
        LabelSet::Nodes(nodes) => {
            // Accept `id`, `name`, or the `id | name` echo of the candidate line.
            let head = token.split('|').next().unwrap_or(token).trim();
            let key = fold_label(head);
            nodes
                .iter()
                .find(|n| fold_label(n.id.as_str()) == key || fold_label(&n.name) == key)
                .map(|n| Label::Node(n.id.clone()))
        }
        LabelSet::ArticleType => ArticleType::parse_label(token).map(Label::ArticleType),
        LabelSet::Tone => ToneLabel::parse_label(token).map(Label::Tone),
        LabelSet::Lean => LeanLabel::parse_label(token).map(Label::Lean),
    }
}

pub fn parse_label_response(raw: &str, set: LabelSet<'_>) -> Result<Label, ParseError> {
    let line = raw
        .lines()
        .map(str::trim)
        .rev()
        .find(|l| !l.is_empty())
        .ok_or_else(|| ParseError::UnparsableResponse(raw.to_string()))?;
    let whole = strip_decoration(line);
    if let Some(label) = match_label(whole, set) {
        return Ok(label);
    }
    let token = match line.rsplit_once(':') {
        Some((_, after)) => strip_decoration(after),
        None => whole,
    };
    if token.is_empty() || token.chars().count() > MAX_ANSWER_CHARS {
        return Err(ParseError::UnparsableResponse(raw.to_string()));
    }
    match_label(token, set).ok_or_else(|| ParseError::InvalidLabel(token.to_string()))
}

/// Parses `index: label` lines. Lines that do not parse, indices outside
/// `expected`, and indices labeled more than once are dropped; the caller
/// treats dropped indices as missing.
pub fn parse_sentence_labels(
    raw: &str,
    expected: std::ops::Range<u32>,
) -> BTreeMap<u32, SentenceType> {
    let mut seen: BTreeMap<u32, Option<SentenceType>> = BTreeMap::new();
    for line in raw.lines() {
        let Some((idx, label)) = line.split_once(':') else { continue };
        let idx = idx.trim().trim_matches(|c| c == '[' || c == ']');
        let Ok(idx) = idx.parse::<u32>() else { continue };
        if !expected.contains(&idx) {
            continue;
        }
        let parsed = SentenceType::parse_label(strip_decoration(label));
        seen.entry(idx)
            .and_modify(|v| *v = None)
            .or_insert(parsed);
    }
    seen.into_iter().filter_map(|(i, v)| v.map(|t| (i, t))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub title: String,
    pub description: String,
}

pub fn parse_summary(raw: &str) -> Result<Summary, ParseError> {
    let mut title = None;
    let mut desc: Option<String> = None;
    for line in raw.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("TITLE:") {
            title = Some(rest.trim().to_string());
        } else if let Some(rest) = t.strip_prefix("DESCRIPTION:") {
            desc = Some(rest.trim().to_string());
        } else if let Some(d) = desc.as_mut() {
            if !t.is_empty() {
                d.push(' ');
                d.push_str(t);
            }
        }
    }
    match (title, desc) {
        (Some(t), Some(d)) if !t.is_empty() && !d.is_empty() => Ok(Summary {
            title: t,
            description: d,
        }),
        _ => Err(ParseError::UnparsableResponse(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Taxonomy;

    #[test]
    fn exact_scale_label() {
        assert_eq!(
            parse_label_response("Neutral Leaning Republican", LabelSet::Lean),
            Ok(Label::Lean(LeanLabel::NeutralLeaningRepublican))
        );
        assert_eq!(
            parse_label_response("  very negative.\n", LabelSet::Tone),
            Ok(Label::Tone(ToneLabel::VeryNegative))
        );
    }

    #[test]
    fn final_line_rule() {
        assert_eq!(
            parse_label_response("I think the answer is: Opinion", LabelSet::ArticleType),
            Ok(Label::ArticleType(ArticleType::Opinion))
        );
        assert_eq!(
            parse_label_response("Reasoning first.\n\nNews Analysis\n", LabelSet::ArticleType),
            Ok(Label::ArticleType(ArticleType::NewsAnalysis))
        );
    }

    #[test]
    fn out_of_scale_label_is_invalid() {
        assert_eq!(
            parse_label_response("Centrist", LabelSet::Lean),
            Err(ParseError::InvalidLabel("Centrist".into()))
        );
    }

    #[test]
    fn empty_or_prose_is_unparsable() {
        assert!(matches!(
            parse_label_response("   \n ", LabelSet::Lean),
            Err(ParseError::UnparsableResponse(_))
        ));
        let prose = "This article discusses many things and I am not able to decide which of the labels fits it best overall";
        assert!(matches!(
            parse_label_response(prose, LabelSet::Tone),
            Err(ParseError::UnparsableResponse(_))
        ));
    }

    #[test]
    fn node_answers_by_id_or_echo() {
        let t = Taxonomy::seed();
        let cats = t.classifiable_children(None);
        let set = LabelSet::Nodes(&cats);
        assert_eq!(
            parse_label_response("politics", set),
            Ok(Label::Node(NodeId::new("politics")))
        );
        assert_eq!(
            parse_label_response("economy | Economy", set),
            Ok(Label::Node(NodeId::new("economy")))
        );
        assert!(matches!(
            parse_label_response("sports", set),
            Err(ParseError::InvalidLabel(_))
        ));
    }

    #[test]
    fn sentence_lines() {
        let raw = "0: fact\n1: quote\n2: banana\n3: opinion\n3: fact\n9: fact\njunk";
        let m = parse_sentence_labels(raw, 0..5);
        assert_eq!(m.len(), 2);
        assert_eq!(m[&0], SentenceType::Fact);
        assert_eq!(m[&1], SentenceType::Quote);
    }

    #[test]
    fn summary_block() {
        let s = parse_summary("TITLE: A thing happened\nDESCRIPTION: First. Second.").unwrap();
        assert_eq!(s.title, "A thing happened");
        assert_eq!(s.description, "First. Second.");
        assert!(parse_summary("nothing").is_err());
    }
}
