//! Biaffine fragment detector.
//!
//! Given per-token decoder states it scores every `(start, type, end)` cell
//! of a sentence. Logits are laid out as an `n × (K·n)` matrix: row `i` is the
//! start token and column `k·n + j` the type and end token.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::corpus::Fragment;
use crate::nn::{Activation, Linear};
use crate::params::{Init, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Output width of the start and end MLPs.
    pub mlp_dim: usize,
    pub activation: Activation,
    /// Adds a learned per-type offset to every logit.
    pub type_bias: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mlp_dim: 64,
            activation: Activation::LeakyRelu,
            type_bias: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    config: DetectorConfig,
    num_types: usize,
    head: Linear,
    tail: Linear,
    /// `d_b × (K·d_b)`, one bilinear block per type.
    bilinear: ParamId,
    /// `d_b × K`, scores depending on the start token only.
    linear: ParamId,
    type_bias: Option<ParamId>,
}

impl Detector {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        config: &DetectorConfig,
        input_dim: usize,
        num_types: usize,
    ) -> Self {
        let b = config.mlp_dim;
        Detector {
            config: config.clone(),
            num_types,
            head: Linear::new(store, init, "detector.head", input_dim, b, true),
            tail: Linear::new(store, init, "detector.tail", input_dim, b, true),
            bilinear: store.add("detector.bilinear", init.xavier(b, b * num_types)),
            linear: store.add("detector.linear", init.xavier(b, num_types)),
            type_bias: config
                .type_bias
                .then(|| store.add("detector.type_bias", crate::tensor::Mat::zeros(1, num_types))),
        }
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Span logits for decoder states `n × d`, shaped `n × (K·n)`.
    pub fn logits(&self, g: &mut Graph<'_>, states: Var) -> Var {
        let n = g.shape(states).0;
        let b = self.config.mlp_dim;
        let hs = self.head.forward(g, states);
        let hs = self.config.activation.apply(g, hs);
        let he = self.tail.forward(g, states);
        let he = self.config.activation.apply(g, he);
        let bil = g.param(self.bilinear);
        let projected = g.matmul(hs, bil);
        let mut blocks = Vec::with_capacity(self.num_types);
        for k in 0..self.num_types {
            let pk = g.slice_cols(projected, k * b, b);
            blocks.push(g.matmul_nt(pk, he));
        }
        let pair = g.concat_cols(&blocks);
        let lin = g.param(self.linear);
        let start = g.matmul(hs, lin);
        let start = g.repeat_cols(start, n);
        let mut out = g.add(pair, start);
        if let Some(bias) = self.type_bias {
            let bias = g.param(bias);
            let bias = g.repeat_cols(bias, n);
            out = g.add_row(out, bias);
        }
        out
    }
}

/// Which cells of the score grid may fire.
///
/// Cells with `i > j` are always masked; `min_start` additionally masks every
/// start at or before a parent fragment's end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanMask {
    pub n: usize,
    pub min_start: usize,
}

impl SpanMask {
    pub fn full(n: usize) -> Self {
        SpanMask { n, min_start: 0 }
    }

    /// Mask for children of a node ending at `parent_end`.
    pub fn after(n: usize, parent_end: usize) -> Self {
        SpanMask {
            n,
            min_start: parent_end + 1,
        }
    }

    pub fn allows(&self, start: usize, end: usize) -> bool {
        start >= self.min_start && start <= end && end < self.n
    }

    /// Flattened row-major cell flags for the `n × (K·n)` layout.
    pub fn cells(&self, num_types: usize) -> Vec<bool> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n * num_types);
        for i in 0..n {
            for _ in 0..num_types {
                for j in 0..n {
                    out.push(self.allows(i, j));
                }
            }
        }
        out
    }
}

/// Positive cells of one decoder step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldGrid {
    /// `(start, type, end)` triples.
    pub positives: BTreeSet<(usize, usize, usize)>,
}

impl GoldGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fragment: Fragment, type_index: usize) {
        self.positives.insert((fragment.start, type_index, fragment.end));
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn targets(&self, n: usize, num_types: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * n * num_types];
        for &(i, k, j) in &self.positives {
            out[i * num_types * n + k * n + j] = 1.0;
        }
        out
    }

    pub fn fits(&self, mask: &SpanMask) -> bool {
        self.positives.iter().all(|&(i, _, j)| mask.allows(i, j))
    }
}

/// Summed binary cross-entropy over unmasked cells of all type channels.
pub fn span_loss(g: &mut Graph<'_>, logits: Var, gold: &GoldGrid, mask: &SpanMask) -> Var {
    let (n, cols) = g.shape(logits);
    assert_eq!(n, mask.n, "mask length does not match logits");
    let num_types = cols / n;
    debug_assert!(gold.fits(mask), "gold fragment outside the mask");
    g.bce_with_logits(logits, gold.targets(n, num_types), mask.cells(num_types))
}

/// Probabilities of one decoder step, indexed by start, type and end.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrid {
    n: usize,
    num_types: usize,
    probs: Vec<f64>,
}

impl ScoreGrid {
    pub fn from_logits(logits: &crate::tensor::Mat) -> Self {
        let n = logits.rows();
        let num_types = logits.cols().checked_div(n).unwrap_or(0);
        ScoreGrid {
            n,
            num_types,
            probs: logits.data().iter().map(|&x| sigmoid(x)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn prob(&self, start: usize, type_index: usize, end: usize) -> f64 {
        self.probs[start * self.num_types * self.n + type_index * self.n + end]
    }
}

/// Fragments of one type channel whose probability is strictly above
/// `threshold`, highest first, at most `max_children` of them.
pub fn decode_grid(
    grid: &ScoreGrid,
    type_index: usize,
    mask: &SpanMask,
    threshold: f64,
    max_children: usize,
) -> Vec<(Fragment, f64)> {
    let mut hits = Vec::new();
    for i in mask.min_start..grid.n {
        for j in i..grid.n {
            let p = grid.prob(i, type_index, j);
            if p > threshold {
                hits.push((Fragment::new(i, j), p));
            }
        }
    }
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(max_children);
    hits
}
