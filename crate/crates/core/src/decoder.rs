//! Forest decoder: an LSTM backbone whose per-path states drive a scratchpad
//! that rewrites the encoder states after every step, and the depth-limited
//! decoding procedure that turns detector grids into an entity forest.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{EntityForest, Fragment, MAX_FRAGMENTS};
use crate::detector::{decode_grid, Detector, ScoreGrid, SpanMask};
use crate::encoder::EncoderOutput;
use crate::nn::{Conv1d, Linear, LstmCell, LstmState};
use crate::params::{Init, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Width of the backbone LSTM state `s_t`.
    pub hidden_dim: usize,
    pub type_dim: usize,
    pub attention_dim: usize,
    /// Rows in the fragment-length table; longer fragments share the last row.
    pub max_fragment_len: usize,
    pub conv_kernel: usize,
    /// When off, every update reads the original reduced encoder states
    /// instead of the previous step's rewritten ones.
    pub scratchpad: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig::desk()
    }
}

impl DecoderConfig {
    pub fn paper() -> Self {
        DecoderConfig {
            hidden_dim: 128,
            type_dim: 32,
            attention_dim: 128,
            max_fragment_len: 32,
            conv_kernel: 3,
            scratchpad: true,
        }
    }

    pub fn desk() -> Self {
        DecoderConfig {
            hidden_dim: 64,
            type_dim: 16,
            attention_dim: 32,
            max_fragment_len: 32,
            conv_kernel: 3,
            scratchpad: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("type_dim", self.type_dim),
            ("attention_dim", self.attention_dim),
            ("max_fragment_len", self.max_fragment_len),
            ("conv_kernel", self.conv_kernel),
        ] {
            if v == 0 {
                return Err(format!("decoder.{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_depth: usize,
    pub threshold: f64,
    pub max_children: usize,
}

impl DecodeConfig {
    pub fn nested() -> Self {
        DecodeConfig {
            max_depth: 1,
            ..Self::discontinuous()
        }
    }

    pub fn discontinuous() -> Self {
        DecodeConfig {
            max_depth: MAX_FRAGMENTS,
            threshold: 0.5,
            max_children: 8,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=MAX_FRAGMENTS).contains(&self.max_depth) {
            return Err(format!("max depth must be in 1..={MAX_FRAGMENTS}"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err("threshold must be in [0, 1)".into());
        }
        if self.max_children == 0 {
            return Err("max_children must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecoderError {
    #[error("cannot step past depth {max_depth}")]
    DepthExceeded { max_depth: usize },
    #[error("no input embedding for the next step")]
    MissingInput,
}

/// State of one decoding path. Values are graph handles, so copying a state
/// forks the path without sharing anything mutable.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub lstm: LstmState,
    /// Current rewritten encoder states `h_t^D`, `n × d`.
    pub scratchpad: Var,
    /// Reduced encoder states `h_0^D`.
    pub memory: Var,
    /// Input for the next step, `w_{t+1}`.
    pub next_input: Option<Var>,
    pub depth: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ScratchpadOutput {
    pub states: Var,
    /// Attention weights over positions, `1 × n`.
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    state_dim: usize,
    init_proj: Option<Linear>,
    lstm: LstmCell,
    bos: ParamId,
    type_table: ParamId,
    len_table: ParamId,
    inner: LstmCell,
    attn_states: Linear,
    attn_query: Linear,
    attn_score: Linear,
    conv: Conv1d,
}

impl Decoder {
    /// `encoder_dim` is the width of `h^E`, `state_dim` the width `d` of the
    /// reduced states.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        config: &DecoderConfig,
        encoder_dim: usize,
        state_dim: usize,
        num_types: usize,
    ) -> Self {
        let d = state_dim;
        let h = config.hidden_dim;
        let input = d + config.type_dim;
        Decoder {
            config: config.clone(),
            state_dim: d,
            init_proj: (encoder_dim != h)
                .then(|| Linear::new(store, init, "decoder.init_proj", encoder_dim, h, true)),
            lstm: LstmCell::new(store, init, "decoder.lstm", input, h),
            bos: store.add("decoder.bos", init.embedding(1, input)),
            type_table: store.add("decoder.type_table", init.embedding(num_types, config.type_dim)),
            len_table: store.add(
                "decoder.len_table",
                init.embedding(config.max_fragment_len, d),
            ),
            inner: LstmCell::new(store, init, "decoder.inner", d, d),
            attn_states: Linear::new(store, init, "decoder.attn_states", d, config.attention_dim, false),
            attn_query: Linear::new(store, init, "decoder.attn_query", h, config.attention_dim, true),
            attn_score: Linear::new(store, init, "decoder.attn_score", config.attention_dim, 1, false),
            conv: Conv1d::new(store, init, "decoder.conv", 2 * d, d, config.conv_kernel),
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn init_state(&self, g: &mut Graph<'_>, enc: &EncoderOutput) -> DecoderState {
        let h = match &self.init_proj {
            Some(p) => p.forward(g, enc.final_state),
            None => enc.final_state,
        };
        let c = g.constant(crate::tensor::Mat::zeros(1, self.config.hidden_dim));
        let bos = g.param(self.bos);
        DecoderState {
            lstm: LstmState { h, c },
            scratchpad: enc.reduced,
            memory: enc.reduced,
            next_input: Some(bos),
            depth: 0,
            len: enc.len,
        }
    }

    /// Input embedding `w_t = [w^f ; w^type]` of a fragment read off `scratchpad`.
    pub fn fragment_embedding(
        &self,
        g: &mut Graph<'_>,
        fragment: Fragment,
        type_index: usize,
        scratchpad: Var,
    ) -> Var {
        let mut inner = self.inner.zero_state(g, 1);
        for p in fragment.start..=fragment.end {
            let row = g.slice_rows(scratchpad, p, 1);
            inner = self.inner.step(g, row, inner);
        }
        let len_index = (fragment.end - fragment.start).min(self.config.max_fragment_len - 1);
        let table = g.param(self.len_table);
        let len = g.slice_rows(table, len_index, 1);
        let first = g.slice_rows(scratchpad, fragment.start, 1);
        let last = g.slice_rows(scratchpad, fragment.end, 1);
        let boundary = g.add(first, last);
        let wf = g.add(inner.h, len);
        let wf = g.add(wf, boundary);
        let types = g.param(self.type_table);
        let ty = g.slice_rows(types, type_index, 1);
        g.concat_cols(&[wf, ty])
    }

    /// One backbone LSTM update.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        state: &DecoderState,
        input: Var,
        max_depth: usize,
    ) -> Result<LstmState, DecoderError> {
        if state.depth >= max_depth {
            return Err(DecoderError::DepthExceeded { max_depth });
        }
        Ok(self.lstm.step(g, input, state.lstm))
    }

    pub fn scratchpad_update(&self, g: &mut Graph<'_>, prev: Var, query: Var) -> ScratchpadOutput {
        let n = g.shape(prev).0;
        let keys = self.attn_states.forward(g, prev);
        let q = self.attn_query.forward(g, query);
        let e = g.add_row(keys, q);
        let e = g.tanh(e);
        let scores = self.attn_score.forward(g, e);
        let scores = g.transpose(scores);
        let attention = g.softmax_rows(scores);
        let context = g.matmul(attention, prev);
        let context = g.gather(context, vec![Some(0); n], 1);
        let joined = g.concat_cols(&[context, prev]);
        let states = self.conv.forward(g, joined, &[(0, n)]);
        ScratchpadOutput { states, attention }
    }

    /// Consumes the pending input: LSTM step, then scratchpad rewrite.
    pub fn advance(
        &self,
        g: &mut Graph<'_>,
        state: &DecoderState,
        max_depth: usize,
    ) -> Result<DecoderState, DecoderError> {
        let input = state.next_input.ok_or(DecoderError::MissingInput)?;
        let lstm = self.step(g, state, input, max_depth)?;
        let source = if self.config.scratchpad {
            state.scratchpad
        } else {
            state.memory
        };
        let update = self.scratchpad_update(g, source, lstm.h);
        Ok(DecoderState {
            lstm,
            scratchpad: update.states,
            next_input: None,
            depth: state.depth + 1,
            ..*state
        })
    }

    /// Forks a path that continues from `fragment`.
    pub fn follow(
        &self,
        g: &mut Graph<'_>,
        state: &DecoderState,
        fragment: Fragment,
        type_index: usize,
    ) -> DecoderState {
        let w = self.fragment_embedding(g, fragment, type_index, state.scratchpad);
        DecoderState {
            next_input: Some(w),
            ..*state
        }
    }
}

/// One decoded parent→child link; `parent` is `None` at depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodedEdge {
    pub depth: usize,
    pub type_index: usize,
    pub parent: Option<Fragment>,
    pub child: Fragment,
}

/// Decodes a forest; entities are the root-to-leaf paths.
pub fn decode_forest(
    g: &mut Graph<'_>,
    decoder: &Decoder,
    detector: &Detector,
    enc: &EncoderOutput,
    types: &[String],
    config: &DecodeConfig,
) -> EntityForest {
    decode_forest_traced(g, decoder, detector, enc, types, config).0
}

/// As [`decode_forest`], also returning every decoded link.
pub fn decode_forest_traced(
    g: &mut Graph<'_>,
    decoder: &Decoder,
    detector: &Detector,
    enc: &EncoderOutput,
    types: &[String],
    config: &DecodeConfig,
) -> (EntityForest, Vec<DecodedEdge>) {
    let mut run = Run {
        g,
        decoder,
        detector,
        types,
        config,
        n: enc.len,
        forest: EntityForest::new(),
        edges: Vec::new(),
    };
    let start = decoder.init_state(run.g, enc);
    let first = decoder
        .advance(run.g, &start, config.max_depth)
        .expect("depth-1 step is always allowed");
    let grid = run.grid(&first);
    for k in 0..detector.num_types() {
        for (f, _) in decode_grid(
            &grid,
            k,
            &SpanMask::full(run.n),
            config.threshold,
            config.max_children,
        ) {
            run.edges.push(DecodedEdge {
                depth: 1,
                type_index: k,
                parent: None,
                child: f,
            });
            run.expand(&mut vec![f], k, &first);
        }
    }
    (run.forest, run.edges)
}

struct Run<'a, 'g, 'p> {
    g: &'g mut Graph<'p>,
    decoder: &'a Decoder,
    detector: &'a Detector,
    types: &'a [String],
    config: &'a DecodeConfig,
    n: usize,
    forest: EntityForest,
    edges: Vec<DecodedEdge>,
}

impl Run<'_, '_, '_> {
    fn grid(&mut self, state: &DecoderState) -> ScoreGrid {
        let logits = self.detector.logits(self.g, state.scratchpad);
        ScoreGrid::from_logits(self.g.value(logits))
    }

    fn emit(&mut self, path: &[Fragment], k: usize) {
        self.forest
            .insert_path(&self.types[k], path)
            .expect("decoded paths respect the positional mask");
    }

    /// `state` is the path's state at the depth `path.len()` was decoded.
    fn expand(&mut self, path: &mut Vec<Fragment>, k: usize, state: &DecoderState) {
        if path.len() >= self.config.max_depth {
            self.emit(path, k);
            return;
        }
        let last = *path.last().expect("non-empty path");
        let forked = self.decoder.follow(self.g, state, last, k);
        let next = self
            .decoder
            .advance(self.g, &forked, self.config.max_depth)
            .expect("depth checked above");
        let grid = self.grid(&next);
        let kids = decode_grid(
            &grid,
            k,
            &SpanMask::after(self.n, last.end),
            self.config.threshold,
            self.config.max_children,
        );
        if kids.is_empty() {
            self.emit(path, k);
            return;
        }
        for (f, _) in kids {
            self.edges.push(DecodedEdge {
                depth: path.len() + 1,
                type_index: k,
                parent: Some(last),
                child: f,
            });
            path.push(f);
            self.expand(path, k, &next);
            path.pop();
        }
    }
}
