//! The canonical JSON-lines corpus format.
//!
//! One record per line:
//! `{"tokens": [..], "entities": [{"type": "T", "fragments": [[start, end], ..]}]}`
//! with inclusive, 0-based token indices. `entities` may be omitted for
//! unannotated input.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::types::{AnnotatedSentence, Entity, Fragment, SentenceError};
use super::CorpusError;

#[derive(Deserialize)]
struct RawRecord {
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<RawEntity>,
}

#[derive(Deserialize)]
struct RawEntity {
    #[serde(rename = "type")]
    label: String,
    fragments: Vec<[i64; 2]>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    tokens: &'a [String],
    entities: Vec<OutEntity<'a>>,
}

#[derive(Serialize)]
struct OutEntity<'a> {
    #[serde(rename = "type")]
    label: &'a str,
    fragments: &'a [Fragment],
}

/// Parses a whole corpus. Blank lines are skipped but still counted for line numbers.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

pub fn parse_record(line: &str, line_no: usize) -> Result<AnnotatedSentence, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|source| CorpusError::Json {
        line: line_no,
        source,
    })?;
    let invalid = |message: String| CorpusError::Validation {
        line: line_no,
        message,
    };
    let mut entities = Vec::with_capacity(raw.entities.len());
    for (idx, e) in raw.entities.into_iter().enumerate() {
        let mut fragments = Vec::with_capacity(e.fragments.len());
        for [s, t] in &e.fragments {
            if *s < 0 || *t < 0 {
                return Err(invalid(format!(
                    "entity #{idx} ({}) has negative index in [{s},{t}]",
                    e.label
                )));
            }
            fragments.push(Fragment::new(*s as usize, *t as usize));
        }
        let entity = Entity::new(e.label.clone(), fragments).map_err(|err| {
            invalid(format!("entity #{idx} ({}) {:?}: {err}", e.label, e.fragments))
        })?;
        entities.push(entity);
    }
    AnnotatedSentence::new(raw.tokens, entities).map_err(|err| match err {
        SentenceError::Entity { .. } | SentenceError::Duplicate(_) => invalid(err.to_string()),
    })
}

pub fn record_to_string(sentence: &AnnotatedSentence) -> String {
    let rec = OutRecord {
        tokens: &sentence.tokens,
        entities: sentence
            .entities()
            .iter()
            .map(|e| OutEntity {
                label: &e.label,
                fragments: e.fragments(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("corpus records always serialize")
}

pub fn write_jsonl<W: Write>(mut writer: W, sentences: &[AnnotatedSentence]) -> std::io::Result<()> {
    for s in sentences {
        writeln!(writer, "{}", record_to_string(s))?;
    }
    writer.flush()
}
