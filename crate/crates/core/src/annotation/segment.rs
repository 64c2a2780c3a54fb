//! Rule-based sentence splitter.
//!
//! A boundary falls after a run of terminal punctuation (plus any closing
//! quotes or brackets) when it is followed by whitespace and then an
//! uppercase letter or an opening quote, unless the period ends a known
//! abbreviation or a single-letter initial, or a quotation is still open.
//! A blank line always ends a sentence. Returned spans tile the body: each
//! span runs from the first character of its sentence to the first
//! character of the next.

use std::ops::Range;

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "gen", "gov", "sen", "rep", "lt",
    "col", "sgt", "capt", "cmdr", "adm", "rev", "hon", "pres", "supt", "inc", "ltd", "co", "corp",
    "bros", "vs", "no", "nos", "vol", "fig", "approx", "dept", "est", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "u.k", "u.n", "e.u", "d.c",
    "a.m", "p.m", "e.g", "i.e", "ph.d",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn opens_sentence(c: char) -> bool {
    c.is_uppercase() || matches!(c, '"' | '“' | '‘' | '\'' | '(' | '[')
}

/// The word immediately before position `i`, letters and inner periods only.
fn word_before(chars: &[(usize, char)], i: usize) -> String {
    let mut j = i;
    while j > 0 && (chars[j - 1].1.is_alphabetic() || chars[j - 1].1 == '.') {
        j -= 1;
    }
    chars[j..i].iter().map(|&(_, c)| c).collect::<String>().to_lowercase()
}

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches('.');
    (w.chars().count() == 1 && w.chars().all(char::is_alphabetic)) || ABBREVIATIONS.contains(&w)
}

pub fn segment_sentences(body: &str) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    let n = chars.len();
    let mut bounds = vec![0usize];
    let mut content_since_bound = false;
    let mut in_quote = false;
    let mut i = 0;

    let mut push = |pos: usize, content: &mut bool| {
        if *content && bounds.last() != Some(&pos) {
            bounds.push(pos);
            *content = false;
        }
    };

    while i < n {
        let (_, c) = chars[i];
        if c.is_whitespace() {
            let mut j = i;
            let mut newlines = 0;
            while j < n && chars[j].1.is_whitespace() {
                if chars[j].1 == '\n' {
                    newlines += 1;
                }
                j += 1;
            }
            if newlines >= 2 && j < n {
                push(chars[j].0, &mut content_since_bound);
                in_quote = false;
            }
            i = j;
            continue;
        }
        content_since_bound = true;
        match c {
            '"' => in_quote = !in_quote,
            '“' => in_quote = true,
            '”' => in_quote = false,
            _ if is_terminal(c) => {
                let mut j = i + 1;
                while j < n && is_terminal(chars[j].1) {
                    j += 1;
                }
                let single_period = c == '.' && j == i + 1;
                while j < n {
                    match chars[j].1 {
                        '"' if in_quote => in_quote = false,
                        '”' => in_quote = false,
                        '’' | '\'' | ')' | ']' => {}
                        _ => break,
                    }
                    j += 1;
                }
                let abbreviated = single_period && is_abbreviation(&word_before(&chars, i));
                if !in_quote && !abbreviated && j < n && chars[j].1.is_whitespace() {
                    let mut k = j;
                    while k < n && chars[k].1.is_whitespace() {
                        k += 1;
                    }
                    if k < n && opens_sentence(chars[k].1) {
                        push(chars[k].0, &mut content_since_bound);
                    }
                }
                i = j;
                continue;
            }
            _ => {}
        }
        i += 1;
    }
    bounds.push(body.len());
    bounds.dedup();
    if bounds.len() == 1 {
        // Empty body: one empty span keeps the "at least one segment" contract.
        #[allow(clippy::single_range_in_vec_init)]
        return vec![0..0];
    }
    bounds.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Sentence text for a span: the slice with surrounding whitespace removed.
pub fn span_text(body: &str, span: &Range<usize>) -> String {
    body[span.clone()].trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_whitespace;

    fn texts(body: &str) -> Vec<String> {
        segment_sentences(body).iter().map(|s| span_text(body, s)).collect()
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(texts("He won. She lost."), vec!["He won.", "She lost."]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(texts("Dr. Smith spoke."), vec!["Dr. Smith spoke."]);
        assert_eq!(texts("The U.S. Senate met. It adjourned."), vec!["The U.S. Senate met.", "It adjourned."]);
        assert_eq!(texts("John F. Kennedy spoke."), vec!["John F. Kennedy spoke."]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("It cost 3.5 million. ok then."), vec!["It cost 3.5 million. ok then."]);
    }

    #[test]
    fn quotes_are_respected() {
        assert_eq!(
            texts("\"We won. They lost,\" she said. Then she left."),
            vec!["\"We won. They lost,\" she said.", "Then she left."]
        );
        assert_eq!(
            texts("He said: \"Go home.\" The crowd left."),
            vec!["He said: \"Go home.\"", "The crowd left."]
        );
    }

    #[test]
    fn paragraph_break_always_splits() {
        assert_eq!(texts("A headline without a period\n\nBody starts here."), vec![
            "A headline without a period",
            "Body starts here."
        ]);
    }

    #[test]
    fn spans_tile_the_body() {
        let body = "  First one! Second one? Third... And \"fourth.\"\n\nFifth";
        let spans = segment_sentences(body);
        assert_eq!(spans.first().unwrap().start, 0);
        assert_eq!(spans.last().unwrap().end, body.len());
        for w in spans.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        let joined = texts(body).join(" ");
        assert_eq!(normalize_whitespace(&joined), normalize_whitespace(body));
        assert!(texts(body).iter().all(|t| !t.is_empty()));
    }

    #[test]
    fn always_at_least_one_segment() {
        assert_eq!(segment_sentences("no terminal punctuation").len(), 1);
        assert_eq!(segment_sentences("").len(), 1);
    }
}
