//! Synthetic corpora with controlled shares of discontinuous, nested and
//! overlapping entities.
//!
//! Each sentence draws a number of entity slots. A slot becomes a
//! discontinuous entity with probability `p_discontinuous` (three fragments
//! with probability `p_three_fragment`, otherwise two), and a continuous one
//! otherwise. Discontinuous slots share their first or last fragment with an
//! earlier discontinuous entity of the same type with probability `p_overlap`;
//! continuous slots nest inside or around an earlier continuous entity with
//! probability `p_nested`. All other placements use only free tokens, so the
//! generator knows exactly which entities overlap.
//!
//! No entity is ever a strict prefix of another entity of the same type.
//! Words inside an entity come from a vocabulary band reserved for its type.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{AnnotatedSentence, Entity, Fragment};
use super::CorpusError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sentences: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub num_types: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub max_fragment_len: usize,
    pub p_discontinuous: f64,
    pub p_three_fragment: f64,
    pub p_nested: f64,
    pub p_overlap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 1000,
            vocab_size: 400,
            min_len: 8,
            max_len: 16,
            num_types: 3,
            min_entities: 1,
            max_entities: 3,
            max_fragment_len: 3,
            p_discontinuous: 0.3,
            p_three_fragment: 0.25,
            p_nested: 0.2,
            p_overlap: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::SynthConfig(m));
        if self.num_types == 0 {
            return fail("num_types must be at least 1".into());
        }
        if self.vocab_size < self.num_types + 1 {
            return fail(format!(
                "vocab_size {} cannot hold a band for each of {} types plus background",
                self.vocab_size, self.num_types
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!(
                "sentence length range {}..={} is empty",
                self.min_len, self.max_len
            ));
        }
        if self.min_entities > self.max_entities {
            return fail("min_entities exceeds max_entities".into());
        }
        if self.max_fragment_len == 0 {
            return fail("max_fragment_len must be at least 1".into());
        }
        for (name, p) in [
            ("p_discontinuous", self.p_discontinuous),
            ("p_three_fragment", self.p_three_fragment),
            ("p_nested", self.p_nested),
            ("p_overlap", self.p_overlap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_discontinuous > 0.0 {
            let needed = if self.p_three_fragment > 0.0 { 5 } else { 3 };
            if self.min_len < needed {
                return fail(format!(
                    "min_len {} is too short for the requested fragment counts (needs {needed})",
                    self.min_len
                ));
            }
        }
        Ok(())
    }
}

/// What the generator placed, counted while placing it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthLedger {
    pub sentences: usize,
    pub entities: usize,
    pub discontinuous: usize,
    pub two_fragment: usize,
    pub three_fragment: usize,
    pub nested: usize,
    pub shared_fragment: usize,
    pub overlapping: usize,
    pub sentences_with_discontinuous: usize,
    pub skipped_slots: usize,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sentences: Vec<AnnotatedSentence>,
    pub ledger: SynthLedger,
}

const PLACEMENT_ATTEMPTS: usize = 30;
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pseudo-word for a vocabulary index; distinct indices give distinct words.
pub fn synth_word(mut index: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    for digit in 0.. {
        let syl = index % base;
        out.push(CONSONANTS[syl / VOWELS.len()] as char);
        out.push(VOWELS[syl % VOWELS.len()] as char);
        index /= base;
        if index == 0 && digit >= 1 {
            break;
        }
    }
    out
}

pub fn type_label(k: usize) -> String {
    format!("T{k}")
}

struct Draft {
    n: usize,
    entities: Vec<Entity>,
    overlapping: Vec<bool>,
    occupied: Vec<bool>,
}

fn is_prefix(a: &Entity, b: &Entity) -> bool {
    a.label == b.label && b.fragments().starts_with(a.fragments())
}

impl Draft {
    fn new(n: usize) -> Self {
        Draft {
            n,
            entities: Vec::new(),
            overlapping: Vec::new(),
            occupied: vec![false; n],
        }
    }

    fn is_free(&self, frags: &[Fragment]) -> bool {
        frags
            .iter()
            .all(|f| f.end < self.n && (f.start..=f.end).all(|t| !self.occupied[t]))
    }

    /// Adds `e` unless it duplicates or prefixes an existing same-type entity.
    /// Without `may_overlap`, every token of `e` must be free.
    fn try_add(&mut self, e: Entity, may_overlap: bool) -> bool {
        if self
            .entities
            .iter()
            .any(|o| is_prefix(o, &e) || is_prefix(&e, o))
        {
            return false;
        }
        if !may_overlap && !self.is_free(e.fragments()) {
            return false;
        }
        let mut touched = false;
        for (i, o) in self.entities.iter().enumerate() {
            if o.shares_token_with(&e) {
                self.overlapping[i] = true;
                touched = true;
            }
        }
        for t in e.tokens() {
            self.occupied[t] = true;
        }
        self.entities.push(e);
        self.overlapping.push(touched);
        true
    }
}

/// Lays out `count` fragments with gaps inside `lo..=hi`, on free tokens only.
fn place_free(
    rng: &mut ChaCha8Rng,
    draft: &Draft,
    count: usize,
    max_len: usize,
    lo: usize,
    hi: usize,
) -> Option<Vec<Fragment>> {
    if count == 0 {
        return Some(Vec::new());
    }
    if hi >= draft.n || lo > hi {
        return None;
    }
    let room = hi - lo + 1;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let lens: Vec<usize> = (0..count).map(|_| rng.gen_range(1..=max_len)).collect();
        let gaps: Vec<usize> = (1..count).map(|_| rng.gen_range(1..=3)).collect();
        let total: usize = lens.iter().sum::<usize>() + gaps.iter().sum::<usize>();
        if total > room {
            continue;
        }
        let mut pos = lo + rng.gen_range(0..=room - total);
        let mut frags = Vec::with_capacity(count);
        for (i, len) in lens.iter().enumerate() {
            frags.push(Fragment::new(pos, pos + len - 1));
            pos += len + gaps.get(i).copied().unwrap_or(0);
        }
        if draft.is_free(&frags) {
            return Some(frags);
        }
    }
    None
}

enum Placed {
    Free,
    Nested,
    Shared,
}

fn place_discontinuous(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    draft: &mut Draft,
    count: usize,
) -> Option<Placed> {
    let anchors: Vec<usize> = (0..draft.entities.len())
        .filter(|&i| draft.entities[i].is_discontinuous())
        .collect();
    if !anchors.is_empty() && rng.gen_bool(cfg.p_overlap) {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let anchor = draft.entities[*anchors.choose(rng).unwrap()].clone();
            let frags = anchor.fragments();
            let candidate = if rng.gen_bool(0.5) {
                let first = frags[0];
                place_free(rng, draft, count - 1, cfg.max_fragment_len, first.end + 2, draft.n - 1)
                    .map(|mut rest| {
                        rest.insert(0, first);
                        rest
                    })
            } else {
                let last = *frags.last().unwrap();
                last.start
                    .checked_sub(2)
                    .and_then(|hi| place_free(rng, draft, count - 1, cfg.max_fragment_len, 0, hi))
                    .map(|mut rest| {
                        rest.push(last);
                        rest
                    })
            };
            if let Some(fs) = candidate {
                let e = Entity::new(anchor.label.clone(), fs).expect("ordered fragments");
                if draft.try_add(e, true) {
                    return Some(Placed::Shared);
                }
            }
        }
    }
    let label = type_label(rng.gen_range(0..cfg.num_types));
    for _ in 0..PLACEMENT_ATTEMPTS {
        let fs = place_free(rng, draft, count, cfg.max_fragment_len, 0, draft.n - 1)?;
        if draft.try_add(Entity::new(label.clone(), fs).expect("ordered"), false) {
            return Some(Placed::Free);
        }
    }
    None
}

fn place_continuous(rng: &mut ChaCha8Rng, cfg: &SynthConfig, draft: &mut Draft) -> Option<Placed> {
    let anchors: Vec<usize> = (0..draft.entities.len())
        .filter(|&i| !draft.entities[i].is_discontinuous())
        .collect();
    if !anchors.is_empty() && rng.gen_bool(cfg.p_nested) {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let span = draft.entities[*anchors.choose(rng).unwrap()].fragments()[0];
            let inner = span.len() >= 2 && rng.gen_bool(0.5);
            let (s, e) = if inner {
                let s = rng.gen_range(span.start..=span.end);
                let e = rng.gen_range(s..=span.end);
                (s, e)
            } else {
                let left = rng.gen_range(0..=2usize).min(span.start);
                let right = rng.gen_range(0..=2usize).min(draft.n - 1 - span.end);
                (span.start - left, span.end + right)
            };
            if (s, e) == (span.start, span.end) {
                continue;
            }
            let label = type_label(rng.gen_range(0..cfg.num_types));
            let ent = Entity::new(label, vec![Fragment::new(s, e)]).expect("valid span");
            if draft.try_add(ent, true) {
                return Some(Placed::Nested);
            }
        }
    }
    let label = type_label(rng.gen_range(0..cfg.num_types));
    for _ in 0..PLACEMENT_ATTEMPTS {
        let fs = place_free(rng, draft, 1, cfg.max_fragment_len, 0, draft.n - 1)?;
        if draft.try_add(Entity::new(label.clone(), fs).expect("valid"), false) {
            return Some(Placed::Free);
        }
    }
    None
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = SynthLedger::default();
    let band = cfg.vocab_size / (cfg.num_types + 1);
    let mut sentences = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let n = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut draft = Draft::new(n);
        let slots = rng.gen_range(cfg.min_entities..=cfg.max_entities);
        for _ in 0..slots {
            let placed = if rng.gen_bool(cfg.p_discontinuous) {
                let count = if rng.gen_bool(cfg.p_three_fragment) { 3 } else { 2 };
                place_discontinuous(&mut rng, cfg, &mut draft, count)
            } else {
                place_continuous(&mut rng, cfg, &mut draft)
            };
            match placed {
                Some(Placed::Nested) => ledger.nested += 1,
                Some(Placed::Shared) => ledger.shared_fragment += 1,
                Some(Placed::Free) => {}
                None => ledger.skipped_slots += 1,
            }
        }

        let mut token_band = vec![0usize; n];
        for e in draft.entities.iter().rev() {
            let k: usize = e.label[1..].parse().expect("generated label");
            for t in e.tokens() {
                token_band[t] = k + 1;
            }
        }
        let tokens = token_band
            .iter()
            .map(|b| synth_word(b * band + rng.gen_range(0..band)))
            .collect();

        ledger.sentences += 1;
        ledger.entities += draft.entities.len();
        ledger.overlapping += draft.overlapping.iter().filter(|o| **o).count();
        let mut any_disc = false;
        for e in &draft.entities {
            match e.fragments().len() {
                1 => {}
                2 => ledger.two_fragment += 1,
                _ => ledger.three_fragment += 1,
            }
            any_disc |= e.is_discontinuous();
        }
        if any_disc {
            ledger.sentences_with_discontinuous += 1;
        }
        sentences.push(
            AnnotatedSentence::new(tokens, draft.entities)
                .expect("generator only emits valid sentences"),
        );
    }
    ledger.discontinuous = ledger.two_fragment + ledger.three_fragment;
    Ok(SynthCorpus { sentences, ledger })
}
