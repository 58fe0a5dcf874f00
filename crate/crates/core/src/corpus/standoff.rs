//! Character-offset standoff import.
//!
//! Annotation lines follow the brat convention
//! `ID<TAB>TYPE START END[;START END]*<TAB>SURFACE`, with half-open character
//! offsets into the sentence text. Text is tokenized by splitting on
//! whitespace and then peeling leading and trailing punctuation off each chunk,
//! one token per punctuation character.

use super::types::{AnnotatedSentence, Entity, Fragment};
use super::CorpusError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character offsets, half-open.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StandoffAnnotation {
    pub id: String,
    pub label: String,
    pub spans: Vec<(usize, usize)>,
    pub surface: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlignMode {
    /// Every span must start and end on token boundaries.
    #[default]
    Strict,
    /// Misaligned spans snap outward to the covering tokens, with a warning.
    Lenient,
}

#[derive(Clone, Debug, Default)]
pub struct ImportOutcome {
    pub sentence: AnnotatedSentence,
    pub warnings: Vec<String>,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lo = start;
        let mut hi = end;
        while lo < hi && is_punct(chars[lo]) {
            lo += 1;
        }
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        let mk = |s: usize, e: usize| Token {
            text: chars[s..e].iter().collect(),
            start: s,
            end: e,
        };
        tokens.extend((start..lo).map(|p| mk(p, p + 1)));
        if lo < hi {
            tokens.push(mk(lo, hi));
        }
        tokens.extend((hi..end).map(|p| mk(p, p + 1)));
    }
    tokens
}

/// Parses `"0 6;13 17"` into half-open character spans.
pub fn parse_span_list(text: &str) -> Result<Vec<(usize, usize)>, String> {
    text.split(';')
        .map(|part| {
            let mut it = part.split_whitespace();
            let (Some(s), Some(e), None) = (it.next(), it.next(), it.next()) else {
                return Err(format!("expected `START END`, got {part:?}"));
            };
            let s: usize = s.parse().map_err(|_| format!("bad offset {s:?}"))?;
            let e: usize = e.parse().map_err(|_| format!("bad offset {e:?}"))?;
            if e <= s {
                return Err(format!("empty or reversed span {s} {e}"));
            }
            Ok((s, e))
        })
        .collect()
}

/// Parses text-bound annotation lines. Lines whose id does not start with `T`
/// (relations, notes, attributes) and blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<StandoffAnnotation>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || !line.starts_with('T') {
            continue;
        }
        let bad = |message: String| CorpusError::Standoff {
            line: line_no,
            message,
        };
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default();
        let middle = cols
            .next()
            .ok_or_else(|| bad("missing TYPE and offsets column".into()))?;
        let surface = cols.next().unwrap_or_default();
        let (label, offsets) = middle
            .split_once(' ')
            .ok_or_else(|| bad(format!("missing offsets in {middle:?}")))?;
        let spans = parse_span_list(offsets).map_err(bad)?;
        out.push(StandoffAnnotation {
            id: id.to_string(),
            label: label.to_string(),
            spans,
            surface: surface.to_string(),
        });
    }
    Ok(out)
}

/// Maps character spans onto tokens and builds an [`AnnotatedSentence`].
///
/// Each span covers the minimal token range touching it. Resulting token
/// ranges are sorted, and ranges that overlap or sit side by side are merged
/// into one fragment.
pub fn import_standoff(
    text: &str,
    annotations: &[StandoffAnnotation],
    mode: AlignMode,
) -> Result<ImportOutcome, CorpusError> {
    let tokens = tokenize(text);
    let mut warnings = Vec::new();
    let mut entities = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let mut ranges = Vec::with_capacity(ann.spans.len());
        for &(s, e) in &ann.spans {
            let covering: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.start < e && t.end > s)
                .map(|(i, _)| i)
                .collect();
            let (Some(&first), Some(&last)) = (covering.first(), covering.last()) else {
                return Err(CorpusError::Alignment {
                    id: ann.id.clone(),
                    message: format!("span {s} {e} covers no token"),
                });
            };
            let (ts, te) = (tokens[first].start, tokens[last].end);
            if ts != s || te != e {
                let message = format!(
                    "span {s} {e} does not fall on token boundaries (covering tokens span {ts} {te})"
                );
                match mode {
                    AlignMode::Strict => {
                        return Err(CorpusError::Alignment {
                            id: ann.id.clone(),
                            message,
                        })
                    }
                    AlignMode::Lenient => warnings.push(format!("{}: {message}; snapped", ann.id)),
                }
            }
            ranges.push(Fragment::new(first, last));
        }
        ranges.sort();
        let mut merged: Vec<Fragment> = Vec::with_capacity(ranges.len());
        for r in ranges {
            match merged.last_mut() {
                Some(prev) if r.start <= prev.end + 1 => prev.end = prev.end.max(r.end),
                _ => merged.push(r),
            }
        }
        let entity = Entity::new(ann.label.clone(), merged).map_err(|e| CorpusError::Alignment {
            id: ann.id.clone(),
            message: e.to_string(),
        })?;
        if !entities.contains(&entity) {
            entities.push(entity);
        } else {
            warnings.push(format!("{}: duplicate of an earlier annotation; dropped", ann.id));
        }
    }
    let sentence = AnnotatedSentence::new(tokens.into_iter().map(|t| t.text).collect(), entities)
        .map_err(|e| CorpusError::Alignment {
            id: String::new(),
            message: e.to_string(),
        })?;
    Ok(ImportOutcome { sentence, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(label: &str, spans: &str) -> StandoffAnnotation {
        StandoffAnnotation {
            id: "T1".into(),
            label: label.into(),
            spans: parse_span_list(spans).unwrap(),
            surface: String::new(),
        }
    }

    #[test]
    fn discontinuous_span_maps_to_token_fragments() {
        let out = import_standoff("severe joint pain", &[ann("ADR", "0 6;13 17")], AlignMode::Strict)
            .unwrap();
        assert_eq!(out.sentence.tokens, vec!["severe", "joint", "pain"]);
        assert_eq!(out.sentence.entities(), &[Entity::of("ADR", &[(0, 0), (2, 2)])]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn whole_text_is_one_fragment() {
        let out = import_standoff("severe joint pain", &[ann("ADR", "0 17")], AlignMode::Strict)
            .unwrap();
        assert_eq!(out.sentence.entities(), &[Entity::of("ADR", &[(0, 2)])]);
    }

    #[test]
    fn adjacent_spans_merge() {
        let out = import_standoff("severe joint pain", &[ann("ADR", "7 12;13 17")], AlignMode::Strict)
            .unwrap();
        assert_eq!(out.sentence.entities(), &[Entity::of("ADR", &[(1, 2)])]);
    }

    #[test]
    fn mid_token_span_fails_strict_and_snaps_lenient() {
        let a = ann("ADR", "2 6");
        let err = import_standoff("severe joint pain", std::slice::from_ref(&a), AlignMode::Strict).unwrap_err();
        assert!(matches!(err, CorpusError::Alignment { .. }));
        let out = import_standoff("severe joint pain", &[a], AlignMode::Lenient).unwrap();
        assert_eq!(out.sentence.entities(), &[Entity::of("ADR", &[(0, 0)])]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn punctuation_is_split_off() {
        let toks: Vec<String> = tokenize("(severe) pain, again.").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, vec!["(", "severe", ")", "pain", ",", "again", "."]);
    }

    #[test]
    fn annotation_lines() {
        let text = "T1\tADR 0 6;13 17\tsevere pain\n#1\tAnnotatorNotes T1\tx\nR1\tRel Arg1:T1 Arg2:T2\n";
        let anns = parse_annotations(text).unwrap();
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].label, "ADR");
        assert_eq!(anns[0].spans, vec![(0, 6), (13, 17)]);
        assert_eq!(anns[0].surface, "severe pain");
    }

    #[test]
    fn malformed_offsets_are_reported() {
        let err = parse_annotations("T1\tADR 0 x\tfoo\n").unwrap_err();
        assert!(matches!(err, CorpusError::Standoff { line: 1, .. }));
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let out = import_standoff("café au lait", &[ann("X", "5 7")], AlignMode::Strict).unwrap();
        assert_eq!(out.sentence.entities(), &[Entity::of("X", &[(1, 1)])]);
    }
}
