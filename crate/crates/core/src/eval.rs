//! Strict entity-level scoring, discontinuous subsets, overlap patterns and
//! decode throughput.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Entity};
use crate::decoder::DecodeConfig;
use crate::model::{Dataset, Model, ModelError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("{predicted} prediction lists for {gold} gold sentences")]
    Misaligned { predicted: usize, gold: usize },
}

/// Exact match: same type and identical fragment lists.
pub fn entity_match(pred: &Entity, gold: &Entity) -> bool {
    pred.label == gold.label && pred.fragments() == gold.fragments()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl Prf {
    pub fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            correct as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            correct as f64 / gold as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            predicted,
            gold,
            correct,
        }
    }
}

fn check_aligned<P, G>(preds: &[P], golds: &[G]) -> Result<(), EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Misaligned {
            predicted: preds.len(),
            gold: golds.len(),
        });
    }
    Ok(())
}

/// Micro-averaged scores; each sentence's entities are treated as a set.
pub fn prf(preds: &[Vec<Entity>], golds: &[Vec<Entity>]) -> Result<Prf, EvalError> {
    check_aligned(preds, golds)?;
    let (mut p, mut g, mut c) = (0, 0, 0);
    for (ps, gs) in preds.iter().zip(golds) {
        let ps: BTreeSet<&Entity> = ps.iter().collect();
        let gs: BTreeSet<&Entity> = gs.iter().collect();
        p += ps.len();
        g += gs.len();
        c += ps.intersection(&gs).count();
    }
    Ok(Prf::from_counts(p, g, c))
}

pub fn per_type_prf(
    preds: &[Vec<Entity>],
    golds: &[Vec<Entity>],
) -> Result<BTreeMap<String, Prf>, EvalError> {
    check_aligned(preds, golds)?;
    let labels: BTreeSet<&str> = preds
        .iter()
        .chain(golds)
        .flatten()
        .map(|e| e.label.as_str())
        .collect();
    let mut out = BTreeMap::new();
    for label in labels {
        let pick = |lists: &[Vec<Entity>]| -> Vec<Vec<Entity>> {
            lists
                .iter()
                .map(|es| es.iter().filter(|e| e.label == label).cloned().collect())
                .collect()
        };
        out.insert(label.to_string(), prf(&pick(preds), &pick(golds))?);
    }
    Ok(out)
}

/// Indices of sentences holding at least one gold entity with several fragments.
pub fn discontinuous_sentences(golds: &[AnnotatedSentence]) -> Vec<usize> {
    golds
        .iter()
        .enumerate()
        .filter(|(_, s)| s.has_discontinuous())
        .map(|(i, _)| i)
        .collect()
}

/// Keeps only entities with more than one fragment.
pub fn discontinuous_only(entities: &[Entity]) -> Vec<Entity> {
    entities.iter().filter(|e| e.is_discontinuous()).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetScores {
    /// Sentences with a discontinuous gold entity, scored on all their entities.
    pub sentences: usize,
    pub sentence_subset: Prf,
    /// Every sentence, scored on discontinuous entities only.
    pub mentions: Prf,
}

pub fn discontinuous_subsets(
    preds: &[Vec<Entity>],
    golds: &[AnnotatedSentence],
) -> Result<SubsetScores, EvalError> {
    check_aligned(preds, golds)?;
    let idx = discontinuous_sentences(golds);
    let sub_preds: Vec<Vec<Entity>> = idx.iter().map(|&i| preds[i].clone()).collect();
    let sub_golds: Vec<Vec<Entity>> = idx.iter().map(|&i| golds[i].entities().to_vec()).collect();
    let disc_preds: Vec<Vec<Entity>> = preds.iter().map(|p| discontinuous_only(p)).collect();
    let disc_golds: Vec<Vec<Entity>> = golds
        .iter()
        .map(|s| discontinuous_only(s.entities()))
        .collect();
    Ok(SubsetScores {
        sentences: idx.len(),
        sentence_subset: prf(&sub_preds, &sub_golds)?,
        mentions: prf(&disc_preds, &disc_golds)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPattern {
    None,
    Left,
    Right,
    Multiple,
}

impl OverlapPattern {
    pub const ALL: [OverlapPattern; 4] = [
        OverlapPattern::None,
        OverlapPattern::Left,
        OverlapPattern::Right,
        OverlapPattern::Multiple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OverlapPattern::None => "none",
            OverlapPattern::Left => "left",
            OverlapPattern::Right => "right",
            OverlapPattern::Multiple => "multiple",
        }
    }
}

/// Where an entity overlaps the other entities of its sentence.
///
/// A fragment is shared when any of its tokens belongs to another entity.
/// Sharing nothing gives `None`; sharing two or more fragments gives
/// `Multiple`. With exactly one shared fragment the entity is `Left` when that
/// is its first fragment and `Right` when it is its last. A single-fragment
/// entity is judged on its edge tokens instead: only the first token shared is
/// `Left`, only the last is `Right`, anything else is `Multiple`.
/// Copies of `entity` among `cohabitants` are ignored.
pub fn overlap_pattern(entity: &Entity, cohabitants: &[Entity]) -> OverlapPattern {
    let others: BTreeSet<usize> = cohabitants
        .iter()
        .filter(|c| *c != entity)
        .flat_map(|c| c.tokens())
        .collect();
    let frags = entity.fragments();
    let shared: Vec<usize> = frags
        .iter()
        .enumerate()
        .filter(|(_, f)| (f.start..=f.end).any(|t| others.contains(&t)))
        .map(|(i, _)| i)
        .collect();
    match shared.as_slice() {
        [] => OverlapPattern::None,
        [_] if frags.len() == 1 => {
            let f = frags[0];
            let first = others.contains(&f.start);
            let last = others.contains(&f.end);
            let inner = (f.start + 1..f.end).any(|t| others.contains(&t));
            match (first, last, inner) {
                (true, false, false) if f.start != f.end => OverlapPattern::Left,
                (false, true, false) => OverlapPattern::Right,
                _ => OverlapPattern::Multiple,
            }
        }
        [0] => OverlapPattern::Left,
        [i] if *i == frags.len() - 1 => OverlapPattern::Right,
        _ => OverlapPattern::Multiple,
    }
}

/// Scores restricted to each overlap class. Gold entities are classified
/// against the other gold entities, predictions against other predictions.
pub fn pattern_scores(
    preds: &[Vec<Entity>],
    golds: &[Vec<Entity>],
) -> Result<BTreeMap<OverlapPattern, Prf>, EvalError> {
    check_aligned(preds, golds)?;
    let classify = |lists: &[Vec<Entity>], pat: OverlapPattern| -> Vec<Vec<Entity>> {
        lists
            .iter()
            .map(|es| {
                es.iter()
                    .filter(|e| overlap_pattern(e, es) == pat)
                    .cloned()
                    .collect()
            })
            .collect()
    };
    let mut out = BTreeMap::new();
    for pat in OverlapPattern::ALL {
        out.insert(pat, prf(&classify(preds, pat), &classify(golds, pat))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub sentences: usize,
    pub seconds: f64,
    pub sentences_per_sec: f64,
    pub batch_size: usize,
    pub threads: usize,
}

pub fn sentences_per_sec(sentences: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        sentences as f64 / seconds
    } else {
        f64::INFINITY
    }
}

/// Wall-clock decoding speed over the whole dataset, after one untimed
/// warm-up batch.
pub fn throughput(
    model: &Model,
    data: Dataset<'_>,
    decode: &DecodeConfig,
    batch_size: usize,
) -> Result<Throughput, ModelError> {
    let inputs = data.inputs();
    let batch_size = batch_size.max(1);
    let warm = batch_size.min(inputs.len());
    model.predict(&inputs[..warm], decode, batch_size)?;
    let start = Instant::now();
    model.predict(&inputs, decode, batch_size)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Throughput {
        sentences: inputs.len(),
        seconds,
        sentences_per_sec: sentences_per_sec(inputs.len(), seconds),
        batch_size,
        threads: rayon::current_num_threads(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discontinuous: Option<SubsetScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap_patterns: Option<BTreeMap<OverlapPattern, Prf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput: Option<Throughput>,
}

impl EvalReport {
    pub fn new(
        preds: &[Vec<Entity>],
        golds: &[AnnotatedSentence],
        subsets: bool,
        patterns: bool,
    ) -> Result<Self, EvalError> {
        let gold_lists: Vec<Vec<Entity>> = golds.iter().map(|s| s.entities().to_vec()).collect();
        Ok(EvalReport {
            overall: prf(preds, &gold_lists)?,
            per_type: per_type_prf(preds, &gold_lists)?,
            discontinuous: subsets.then(|| discontinuous_subsets(preds, golds)).transpose()?,
            overlap_patterns: patterns.then(|| pattern_scores(preds, &gold_lists)).transpose()?,
            throughput: None,
        })
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, s: &Prf| {
            let _ = writeln!(
                out,
                "{name:<24} {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.predicted,
                s.gold,
                s.correct
            );
        };
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "", "P", "R", "F1", "pred", "gold", "correct"
        );
        row(&mut out, "overall", &self.overall);
        for (label, s) in &self.per_type {
            row(&mut out, &format!("type {label}"), s);
        }
        if let Some(d) = &self.discontinuous {
            row(
                &mut out,
                &format!("disc. sentences ({})", d.sentences),
                &d.sentence_subset,
            );
            row(&mut out, "disc. mentions", &d.mentions);
        }
        if let Some(p) = &self.overlap_patterns {
            for (pat, s) in p {
                row(&mut out, &format!("overlap {}", pat.name()), s);
            }
        }
        if let Some(t) = &self.throughput {
            let _ = writeln!(
                out,
                "throughput: {:.1} sentences/sec ({} sentences, batch {}, {} thread(s))",
                t.sentences_per_sec, t.sentences, t.batch_size, t.threads
            );
        }
        out
    }
}

/// Per-sentence false positives and false negatives, one JSON value per
/// sentence with at least one error.
pub fn error_dump(
    preds: &[Vec<Entity>],
    golds: &[AnnotatedSentence],
) -> Result<Vec<serde_json::Value>, EvalError> {
    check_aligned(preds, golds)?;
    let mut out = Vec::new();
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        let ps: BTreeSet<&Entity> = p.iter().collect();
        let gs: BTreeSet<&Entity> = g.entities().iter().collect();
        let fp: Vec<String> = ps.difference(&gs).map(|e| e.to_string()).collect();
        let fneg: Vec<String> = gs.difference(&ps).map(|e| e.to_string()).collect();
        if fp.is_empty() && fneg.is_empty() {
            continue;
        }
        out.push(serde_json::json!({
            "sentence": i,
            "tokens": g.tokens,
            "false_positives": fp,
            "false_negatives": fneg,
        }));
    }
    Ok(out)
}
