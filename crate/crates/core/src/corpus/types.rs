use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest number of fragments the forest decoder can produce for one entity.
pub const MAX_FRAGMENTS: usize = 3;

/// A contiguous token span, both ends inclusive and 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Fragment {
    pub start: usize,
    pub end: usize,
}

impl Fragment {
    pub fn new(start: usize, end: usize) -> Self {
        Fragment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, token: usize) -> bool {
        self.start <= token && token <= self.end
    }

    pub fn intersects(&self, other: &Fragment) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl From<[usize; 2]> for Fragment {
    fn from(v: [usize; 2]) -> Self {
        Fragment::new(v[0], v[1])
    }
}

impl From<Fragment> for [usize; 2] {
    fn from(f: Fragment) -> Self {
        [f.start, f.end]
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EntityError {
    #[error("entity has no fragments")]
    Empty,
    #[error("fragment {0} ends before it starts")]
    Reversed(Fragment),
    #[error("fragments {0} and {1} overlap or touch out of order")]
    NotDisjoint(Fragment, Fragment),
    #[error("fragment {fragment} is outside a sentence of {len} tokens")]
    OutOfRange { fragment: Fragment, len: usize },
}

/// A typed mention made of one or more disjoint fragments in textual order.
///
/// Fragments are sorted on construction, so two entities built from the same
/// spans in different orders compare equal. Entities with more than
/// [`MAX_FRAGMENTS`] fragments are representable (they occur in real corpora)
/// but cannot be placed in a forest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entity {
    pub label: String,
    fragments: Vec<Fragment>,
}

impl Entity {
    pub fn new(
        label: impl Into<String>,
        mut fragments: Vec<Fragment>,
    ) -> Result<Self, EntityError> {
        if fragments.is_empty() {
            return Err(EntityError::Empty);
        }
        if let Some(f) = fragments.iter().find(|f| f.end < f.start) {
            return Err(EntityError::Reversed(*f));
        }
        fragments.sort();
        for w in fragments.windows(2) {
            if w[1].start <= w[0].end {
                return Err(EntityError::NotDisjoint(w[0], w[1]));
            }
        }
        Ok(Entity {
            label: label.into(),
            fragments,
        })
    }

    /// Convenience for tests and literals: panics on invalid input.
    pub fn of(label: &str, spans: &[(usize, usize)]) -> Self {
        Entity::new(
            label,
            spans.iter().map(|&(s, e)| Fragment::new(s, e)).collect(),
        )
        .expect("valid entity literal")
    }

    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    pub fn is_discontinuous(&self) -> bool {
        self.fragments.len() > 1
    }

    pub fn fits_forest(&self) -> bool {
        self.fragments.len() <= MAX_FRAGMENTS
    }

    pub fn tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.fragments.iter().flat_map(|f| f.start..=f.end)
    }

    pub fn shares_token_with(&self, other: &Entity) -> bool {
        self.fragments
            .iter()
            .any(|a| other.fragments.iter().any(|b| a.intersects(b)))
    }

    pub fn check_bounds(&self, len: usize) -> Result<(), EntityError> {
        match self.fragments.iter().find(|f| f.end >= len) {
            Some(f) => Err(EntityError::OutOfRange { fragment: *f, len }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.label)?;
        for (i, frag) in self.fragments.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{frag}")?;
        }
        write!(f, "]")
    }
}

/// Tokens with their gold entities, kept in canonical (sorted) order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    entities: Vec<Entity>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SentenceError {
    #[error("entity #{index} {entity}: {source}")]
    Entity {
        index: usize,
        entity: String,
        source: EntityError,
    },
    #[error("entity {0} appears twice")]
    Duplicate(String),
}

impl AnnotatedSentence {
    pub fn new(tokens: Vec<String>, mut entities: Vec<Entity>) -> Result<Self, SentenceError> {
        for (index, e) in entities.iter().enumerate() {
            e.check_bounds(tokens.len())
                .map_err(|source| SentenceError::Entity {
                    index,
                    entity: e.to_string(),
                    source,
                })?;
        }
        entities.sort();
        if let Some(w) = entities.windows(2).find(|w| w[0] == w[1]) {
            return Err(SentenceError::Duplicate(w[0].to_string()));
        }
        Ok(AnnotatedSentence { tokens, entities })
    }

    pub fn unannotated(tokens: Vec<String>) -> Self {
        AnnotatedSentence {
            tokens,
            entities: Vec::new(),
        }
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_entities(&self, entities: Vec<Entity>) -> Result<Self, SentenceError> {
        AnnotatedSentence::new(self.tokens.clone(), entities)
    }

    pub fn has_discontinuous(&self) -> bool {
        self.entities.iter().any(Entity::is_discontinuous)
    }
}
