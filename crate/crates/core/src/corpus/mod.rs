//! Sentences, entities, on-disk formats and forest conversion.

mod forest;
mod jsonl;
pub mod standoff;
mod stats;
mod synth;
mod types;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub use forest::{build_forest, flatten_forest, EntityForest, ForestError, ForestNode};
pub use jsonl::{parse_jsonl, parse_record, record_to_string, write_jsonl};
pub use standoff::{import_standoff, AlignMode, ImportOutcome, StandoffAnnotation};
pub use stats::{compute_stats, CorpusStats};
pub use synth::{generate_synthetic, synth_word, type_label, SynthConfig, SynthCorpus, SynthLedger};
pub use types::{AnnotatedSentence, Entity, EntityError, Fragment, SentenceError, MAX_FRAGMENTS};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("annotation line {line}: {message}")]
    Standoff { line: usize, message: String },
    #[error("annotation {id}: {message}")]
    Alignment { id: String, message: String },
    #[error("synthetic corpus config: {0}")]
    SynthConfig(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(BufReader::new(file))
}

pub fn write_corpus(path: &Path, sentences: &[AnnotatedSentence]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })?;
    write_jsonl(BufWriter::new(file), sentences)?;
    Ok(())
}

/// Splits a corpus into entities the forest decoder can learn and a count of
/// those it cannot (more than [`MAX_FRAGMENTS`] fragments).
pub fn supervisable_entities(sentence: &AnnotatedSentence) -> (Vec<&Entity>, usize) {
    let (keep, drop): (Vec<&Entity>, Vec<&Entity>) =
        sentence.entities().iter().partition(|e| e.fits_forest());
    (keep, drop.len())
}
