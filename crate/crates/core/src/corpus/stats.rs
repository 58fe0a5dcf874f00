use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::AnnotatedSentence;

/// Corpus summary in the shape of the usual dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub entities: usize,
    pub overlapping: usize,
    pub discontinuous: usize,
    /// Share of entities sharing at least one token with another entity, in percent.
    pub overlapping_pct: f64,
    /// Share of entities with more than one fragment, in percent.
    pub discontinuous_pct: f64,
    /// Number of entities per fragment count.
    pub fragment_histogram: BTreeMap<usize, usize>,
    pub sentences_with_discontinuous: usize,
}

pub fn compute_stats(corpus: &[AnnotatedSentence]) -> CorpusStats {
    let mut entities = 0;
    let mut overlapping = 0;
    let mut discontinuous = 0;
    let mut with_disc = 0;
    let mut fragment_histogram = BTreeMap::new();
    for s in corpus {
        let es = s.entities();
        entities += es.len();
        for (i, e) in es.iter().enumerate() {
            *fragment_histogram.entry(e.fragments().len()).or_insert(0) += 1;
            if e.is_discontinuous() {
                discontinuous += 1;
            }
            if es
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && e.shares_token_with(other))
            {
                overlapping += 1;
            }
        }
        if s.has_discontinuous() {
            with_disc += 1;
        }
    }
    let pct = |n: usize| {
        if entities == 0 {
            0.0
        } else {
            100.0 * n as f64 / entities as f64
        }
    };
    CorpusStats {
        sentences: corpus.len(),
        entities,
        overlapping,
        discontinuous,
        overlapping_pct: pct(overlapping),
        discontinuous_pct: pct(discontinuous),
        fragment_histogram,
        sentences_with_discontinuous: with_disc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Entity;

    fn sentence(n: usize, es: Vec<Entity>) -> AnnotatedSentence {
        AnnotatedSentence::new((0..n).map(|i| format!("w{i}")).collect(), es).unwrap()
    }

    #[test]
    fn single_flat_entity() {
        let s = compute_stats(&[sentence(3, vec![Entity::of("T", &[(0, 1)])])]);
        assert_eq!(s.overlapping_pct, 0.0);
        assert_eq!(s.discontinuous_pct, 0.0);
        assert_eq!(s.fragment_histogram.values().sum::<usize>(), s.entities);
    }

    #[test]
    fn shared_token_means_full_overlap() {
        let s = compute_stats(&[sentence(
            4,
            vec![Entity::of("T", &[(0, 1)]), Entity::of("U", &[(1, 3)])],
        )]);
        assert_eq!(s.overlapping_pct, 100.0);
    }

    #[test]
    fn empty_corpus() {
        let s = compute_stats(&[]);
        assert_eq!(s.entities, 0);
        assert_eq!(s.overlapping_pct, 0.0);
    }
}
