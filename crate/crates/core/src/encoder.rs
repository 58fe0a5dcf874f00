//! Token encoder: character CNN plus absolute positions, a stack of
//! self-attention blocks, and a length-preserving convolution that reduces
//! the contextual states to the width the decoder works with.
//!
//! Sentences are packed row-wise into one matrix per batch; every
//! position-wise layer runs once over the whole batch while attention and
//! convolutions stay inside each sentence's row segment.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::nn::{Conv1d, LayerNorm, Linear};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Mat;

/// Characters map to a fixed bucket table, so no vocabulary travels with a model.
pub const CHAR_BUCKETS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of the character-level token embedding.
    pub char_dim: usize,
    /// Width of each character's lookup vector fed to the character CNN.
    pub char_table_dim: usize,
    pub char_kernels: Vec<usize>,
    pub char_filters: usize,
    /// Longer tokens are truncated to this many characters.
    pub max_token_chars: usize,
    pub pos_dim: usize,
    /// Positions past the table reuse its last row.
    pub max_positions: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub reduce_kernel: usize,
    pub reduced_dim: usize,
    /// When set, per-token vectors of this width are read from an external
    /// source and replace the character CNN and self-attention stack.
    pub precomputed_dim: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk()
    }
}

impl EncoderConfig {
    pub fn paper() -> Self {
        EncoderConfig {
            char_dim: 50,
            char_table_dim: 50,
            char_kernels: vec![3, 4, 5],
            char_filters: 200,
            max_token_chars: 32,
            pos_dim: 30,
            max_positions: 512,
            layers: 12,
            heads: 12,
            hidden_dim: 768,
            ffn_dim: 3072,
            reduce_kernel: 3,
            reduced_dim: 128,
            precomputed_dim: None,
        }
    }

    pub fn desk() -> Self {
        EncoderConfig {
            char_dim: 50,
            char_table_dim: 16,
            char_kernels: vec![3, 4, 5],
            char_filters: 32,
            max_token_chars: 32,
            pos_dim: 30,
            max_positions: 256,
            layers: 2,
            heads: 4,
            hidden_dim: 128,
            ffn_dim: 256,
            reduce_kernel: 3,
            reduced_dim: 64,
            precomputed_dim: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.char_dim + self.pos_dim
    }

    /// Width of the contextual states `h^E`.
    pub fn state_dim(&self) -> usize {
        self.precomputed_dim.unwrap_or(self.hidden_dim)
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("char_dim", self.char_dim),
            ("char_table_dim", self.char_table_dim),
            ("char_filters", self.char_filters),
            ("max_token_chars", self.max_token_chars),
            ("pos_dim", self.pos_dim),
            ("max_positions", self.max_positions),
            ("heads", self.heads),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("reduce_kernel", self.reduce_kernel),
            ("reduced_dim", self.reduced_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("encoder.{name} must be positive"));
        }
        if self.char_kernels.is_empty() || self.char_kernels.contains(&0) {
            return Err("encoder.char_kernels must be non-empty and positive".into());
        }
        if self.precomputed_dim.is_none() && self.layers == 0 {
            return Err("encoder.layers must be positive without precomputed vectors".into());
        }
        if self.precomputed_dim == Some(0) {
            return Err("encoder.precomputed_dim must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(format!(
                "encoder.hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            ));
        }
        if self.reduced_dim >= self.state_dim() {
            return Err(format!(
                "encoder.reduced_dim {} must be smaller than the state width {}",
                self.reduced_dim,
                self.state_dim()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("sentence {0} has no tokens")]
    EmptySentence(usize),
    #[error("sentence {0} needs precomputed vectors")]
    MissingVectors(usize),
    #[error("sentence {index}: expected {expected_rows}x{expected_cols} vectors, got {rows}x{cols}")]
    VectorShape {
        index: usize,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
}

/// One sentence as the encoder sees it.
#[derive(Clone, Copy, Debug)]
pub struct EncoderInput<'a> {
    pub tokens: &'a [String],
    pub vectors: Option<&'a Mat>,
}

impl<'a> EncoderInput<'a> {
    pub fn tokens(tokens: &'a [String]) -> Self {
        EncoderInput {
            tokens,
            vectors: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

#[derive(Clone, Debug)]
struct TokenStack {
    char_table: ParamId,
    char_convs: Vec<Conv1d>,
    char_proj: Linear,
    pos_table: ParamId,
    input_proj: Linear,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    stack: Option<TokenStack>,
    reduce: Conv1d,
}

/// Packed encoder outputs for a batch.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// Contextual states `h^E`, all sentences stacked.
    pub states: Var,
    /// Reduced states `c` (= `h_0^D`), all sentences stacked.
    pub reduced: Var,
    /// `(first row, token count)` per sentence.
    pub segments: Vec<(usize, usize)>,
}

/// Encoder outputs for one sentence of `n` tokens.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub states: Var,
    pub reduced: Var,
    /// `h^E_n`, the last contextual state.
    pub final_state: Var,
    pub len: usize,
}

impl EncodedBatch {
    pub fn sentence(&self, g: &mut Graph<'_>, index: usize) -> EncoderOutput {
        let (start, len) = self.segments[index];
        EncoderOutput {
            states: g.slice_rows(self.states, start, len),
            reduced: g.slice_rows(self.reduced, start, len),
            final_state: g.slice_rows(self.states, start + len - 1, 1),
            len,
        }
    }
}

pub fn char_bucket(c: char) -> usize {
    let code = c as usize;
    if code < CHAR_BUCKETS / 2 {
        code
    } else {
        CHAR_BUCKETS / 2 + code % (CHAR_BUCKETS / 2)
    }
}

impl Encoder {
    pub fn new(store: &mut ParamStore, init: &mut Init<'_>, config: &EncoderConfig) -> Self {
        let stack = config.precomputed_dim.is_none().then(|| {
            let char_table = store.add(
                "encoder.char_table",
                init.embedding(CHAR_BUCKETS, config.char_table_dim),
            );
            let char_convs = config
                .char_kernels
                .iter()
                .map(|&k| {
                    Conv1d::new(
                        store,
                        init,
                        &format!("encoder.char_conv{k}"),
                        config.char_table_dim,
                        config.char_filters,
                        k,
                    )
                })
                .collect();
            let char_proj = Linear::new(
                store,
                init,
                "encoder.char_proj",
                config.char_filters * config.char_kernels.len(),
                config.char_dim,
                true,
            );
            let pos_table = store.add(
                "encoder.pos_table",
                init.embedding(config.max_positions, config.pos_dim),
            );
            let input_proj = Linear::new(
                store,
                init,
                "encoder.input_proj",
                config.input_dim(),
                config.hidden_dim,
                true,
            );
            let h = config.hidden_dim;
            let blocks = (0..config.layers)
                .map(|l| {
                    let p = format!("encoder.block{l}");
                    Block {
                        norm_attn: LayerNorm::new(store, &format!("{p}.norm_attn"), h),
                        query: Linear::new(store, init, &format!("{p}.query"), h, h, true),
                        key: Linear::new(store, init, &format!("{p}.key"), h, h, true),
                        value: Linear::new(store, init, &format!("{p}.value"), h, h, true),
                        out: Linear::new(store, init, &format!("{p}.out"), h, h, true),
                        norm_ffn: LayerNorm::new(store, &format!("{p}.norm_ffn"), h),
                        ffn_in: Linear::new(store, init, &format!("{p}.ffn_in"), h, config.ffn_dim, true),
                        ffn_out: Linear::new(store, init, &format!("{p}.ffn_out"), config.ffn_dim, h, true),
                    }
                })
                .collect();
            TokenStack {
                char_table,
                char_convs,
                char_proj,
                pos_table,
                input_proj,
                blocks,
                final_norm: LayerNorm::new(store, "encoder.final_norm", h),
            }
        });
        let reduce = Conv1d::new(
            store,
            init,
            "encoder.reduce",
            config.state_dim(),
            config.reduced_dim,
            config.reduce_kernel,
        );
        Encoder {
            config: config.clone(),
            stack,
            reduce,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn segments(batch: &[EncoderInput<'_>]) -> Result<Vec<(usize, usize)>, EncoderError> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(EncoderError::EmptySentence(i));
            }
            out.push((offset, s.tokens.len()));
            offset += s.tokens.len();
        }
        Ok(out)
    }

    /// `x_i = [x_i^c ; x_i^p]` for every token of the batch, packed.
    ///
    /// Panics in precomputed mode, which has no token embeddings.
    pub fn embed_tokens(&self, g: &mut Graph<'_>, batch: &[EncoderInput<'_>]) -> Var {
        let stack = self.stack.as_ref().expect("token embeddings need the token stack");
        let cfg = &self.config;
        let mut buckets = Vec::new();
        let mut token_chars = Vec::new();
        let mut positions = Vec::new();
        for s in batch {
            for (p, tok) in s.tokens.iter().enumerate() {
                let start = buckets.len();
                buckets.extend(tok.chars().take(cfg.max_token_chars).map(char_bucket));
                if buckets.len() == start {
                    buckets.push(0);
                }
                token_chars.push((start, buckets.len() - start));
                positions.push(Some(p.min(cfg.max_positions - 1)));
            }
        }
        let table = g.param(stack.char_table);
        let chars = g.gather(table, buckets.into_iter().map(Some).collect(), 1);
        let mut pooled = Vec::with_capacity(stack.char_convs.len());
        for conv in &stack.char_convs {
            let feats = conv.forward(g, chars, &token_chars);
            let feats = g.tanh(feats);
            pooled.push(g.segment_max(feats, &token_chars));
        }
        let pooled = g.concat_cols(&pooled);
        let char_emb = stack.char_proj.forward(g, pooled);
        let pos_table = g.param(stack.pos_table);
        let pos_emb = g.gather(pos_table, positions, 1);
        g.concat_cols(&[char_emb, pos_emb])
    }

    /// Self-attention stack over packed inputs; output rows match input rows.
    pub fn encode(&self, g: &mut Graph<'_>, x: Var, segments: &[(usize, usize)]) -> Var {
        let stack = self.stack.as_ref().expect("encode needs the token stack");
        let heads = self.config.heads;
        let head_dim = self.config.hidden_dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut h = stack.input_proj.forward(g, x);
        for block in &stack.blocks {
            let a = block.norm_attn.forward(g, h);
            let q = block.query.forward(g, a);
            let k = block.key.forward(g, a);
            let v = block.value.forward(g, a);
            let mut per_sentence = Vec::with_capacity(segments.len());
            for &(start, len) in segments {
                let qs = g.slice_rows(q, start, len);
                let ks = g.slice_rows(k, start, len);
                let vs = g.slice_rows(v, start, len);
                let mut per_head = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let qh = g.slice_cols(qs, hd * head_dim, head_dim);
                    let kh = g.slice_cols(ks, hd * head_dim, head_dim);
                    let vh = g.slice_cols(vs, hd * head_dim, head_dim);
                    let scores = g.matmul_nt(qh, kh);
                    let scores = g.scale(scores, scale);
                    let weights = g.softmax_rows(scores);
                    per_head.push(g.matmul(weights, vh));
                }
                per_sentence.push(g.concat_cols(&per_head));
            }
            let attended = g.concat_rows(&per_sentence);
            let attended = block.out.forward(g, attended);
            h = g.add(h, attended);
            let b = block.norm_ffn.forward(g, h);
            let f = block.ffn_in.forward(g, b);
            let f = g.gelu(f);
            let f = block.ffn_out.forward(g, f);
            h = g.add(h, f);
        }
        stack.final_norm.forward(g, h)
    }

    /// Length-preserving convolution from state width to `reduced_dim`.
    pub fn conv_reduce(&self, g: &mut Graph<'_>, states: Var, segments: &[(usize, usize)]) -> Var {
        self.reduce.forward(g, states, segments)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        batch: &[EncoderInput<'_>],
    ) -> Result<EncodedBatch, EncoderError> {
        let segments = Self::segments(batch)?;
        let states = match self.config.precomputed_dim {
            None => {
                let x = self.embed_tokens(g, batch);
                self.encode(g, x, &segments)
            }
            Some(dim) => {
                let mut rows = Vec::with_capacity(batch.len());
                for (index, s) in batch.iter().enumerate() {
                    let v = s.vectors.ok_or(EncoderError::MissingVectors(index))?;
                    if v.shape() != (s.tokens.len(), dim) {
                        return Err(EncoderError::VectorShape {
                            index,
                            expected_rows: s.tokens.len(),
                            expected_cols: dim,
                            rows: v.rows(),
                            cols: v.cols(),
                        });
                    }
                    rows.push(g.constant(v.clone()));
                }
                g.concat_rows(&rows)
            }
        };
        let reduced = self.conv_reduce(g, states, &segments);
        Ok(EncodedBatch {
            states,
            reduced,
            segments,
        })
    }
}
