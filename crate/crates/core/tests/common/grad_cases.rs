//! Gradient-check cases; each returns the worst relative error it saw.

use super::{gradcheck, random_mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2f::autograd::{Graph, Var};
use s2f::corpus::{Entity, Fragment};
use s2f::decoder::{Decoder, DecoderConfig, DecoderState};
use s2f::detector::{span_loss, Detector, DetectorConfig, GoldGrid, SpanMask};
use s2f::encoder::{Encoder, EncoderConfig, EncoderInput, EncoderOutput};
use s2f::model::{Dataset, Model, ModelConfig};
use s2f::nn::LstmState;
use s2f::params::{Init, ParamId, ParamStore};
use s2f::training::{compute_loss, teacher_forcing_expand, Mode};

const D: usize = 4;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        char_dim: 5,
        char_table_dim: 3,
        char_kernels: vec![2, 3],
        char_filters: 4,
        max_token_chars: 6,
        pos_dim: 3,
        max_positions: 8,
        layers: 2,
        heads: 2,
        hidden_dim: 6,
        ffn_dim: 7,
        reduce_kernel: 3,
        reduced_dim: D,
        precomputed_dim: None,
    }
}

fn tiny_decoder() -> DecoderConfig {
    DecoderConfig {
        hidden_dim: 5,
        type_dim: 2,
        attention_dim: 3,
        max_fragment_len: 4,
        conv_kernel: 3,
        scratchpad: true,
    }
}

fn ids_with(store: &ParamStore, prefix: &str) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, n, _)| n.starts_with(prefix))
        .map(|(id, _, _)| id)
        .collect()
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn probe(g: &mut Graph<'_>, x: Var, weights: &s2f::tensor::Mat) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(x, w);
    g.sum(p)
}

pub fn encoder_stack() -> f64 {
    let cfg = tiny_encoder();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let enc = Encoder::new(&mut store, &mut Init::new(&mut rng), &cfg);
    let n = 4;
    let x = store.add("probe.input", random_mat(&mut rng, n, cfg.input_dim(), 1.0));
    let weights = random_mat(&mut rng, n, D, 1.0);
    let mut ids = ids_with(&store, "encoder.block");
    ids.extend(ids_with(&store, "encoder.input_proj"));
    ids.extend(ids_with(&store, "encoder.final_norm"));
    ids.extend(ids_with(&store, "encoder.reduce"));
    ids.push(x);
    
    gradcheck(&mut store, &ids, 6, 1, |g| {
        let xv = g.param(x);
        let h = enc.encode(g, xv, &[(0, n)]);
        let c = enc.conv_reduce(g, h, &[(0, n)]);
        probe(g, c, &weights)
    })
}

pub fn token_embeddings() -> f64 {
    let cfg = tiny_encoder();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let enc = Encoder::new(&mut store, &mut Init::new(&mut rng), &cfg);
    let tokens: Vec<String> = ["ab", "xyz", "q", "abcd", "zz"].iter().map(|s| s.to_string()).collect();
    let weights = random_mat(&mut rng, tokens.len(), D, 1.0);
    let mut ids = ids_with(&store, "encoder.char");
    ids.extend(ids_with(&store, "encoder.pos_table"));
    let worst = gradcheck(&mut store, &ids, 8, 2, |g| {
        let out = enc.forward(g, &[EncoderInput::tokens(&tokens)]).unwrap();
        probe(g, out.reduced, &weights)
    });
    worst
}

struct Probes {
    states: ParamId,
    query: ParamId,
    cell: ParamId,
    n: usize,
}

fn decoder_fixture(seed: u64, n: usize) -> (ParamStore, Decoder, Detector, Probes) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (decoder, detector) = {
        let mut init = Init::new(&mut rng);
        let decoder = Decoder::new(&mut store, &mut init, &tiny_decoder(), 6, D, 2);
        let det_cfg = DetectorConfig {
            mlp_dim: 3,
            type_bias: true,
            ..DetectorConfig::default()
        };
        let detector = Detector::new(&mut store, &mut init, &det_cfg, D, 2);
        (decoder, detector)
    };
    let probes = Probes {
        states: store.add("probe.states", random_mat(&mut rng, n, D, 1.0)),
        query: store.add("probe.query", random_mat(&mut rng, 1, 5, 1.0)),
        cell: store.add("probe.cell", random_mat(&mut rng, 1, 5, 1.0)),
        n,
    };
    (store, decoder, detector, probes)
}

fn state_of(g: &mut Graph<'_>, p: &Probes) -> DecoderState {
    let states = g.param(p.states);
    DecoderState {
        lstm: LstmState {
            h: g.param(p.query),
            c: g.param(p.cell),
        },
        scratchpad: states,
        memory: states,
        next_input: None,
        depth: 1,
        len: p.n,
    }
}

pub fn lstm_step() -> f64 {
    let (mut store, decoder, _, p) = decoder_fixture(21, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = store.add("probe.w", random_mat(&mut rng, 1, D + 2, 1.0));
    let wh = random_mat(&mut rng, 1, 5, 1.0);
    let wc = random_mat(&mut rng, 1, 5, 1.0);
    let mut ids = ids_with(&store, "decoder.lstm");
    ids.extend([input, p.query, p.cell]);
    
    gradcheck(&mut store, &ids, 10, 4, |g| {
        let st = state_of(g, &p);
        let w = g.param(input);
        let out = decoder.step(g, &st, w, 3).unwrap();
        let a = probe(g, out.h, &wh);
        let b = probe(g, out.c, &wc);
        g.add(a, b)
    })
}

pub fn fragment_embedding() -> f64 {
    let (mut store, decoder, _, p) = decoder_fixture(22, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights = random_mat(&mut rng, 1, D + 2, 1.0);
    let mut ids = ids_with(&store, "decoder.inner");
    ids.extend(ids_with(&store, "decoder.len_table"));
    ids.extend(ids_with(&store, "decoder.type_table"));
    ids.push(p.states);
    let mut worst = 0.0f64;
    for frag in [Fragment::new(1, 3), Fragment::new(4, 4)] {
        let w = gradcheck(&mut store, &ids, 10, 6, |g| {
            let states = g.param(p.states);
            let w = decoder.fragment_embedding(g, frag, 1, states);
            probe(g, w, &weights)
        });
        worst = worst.max(w);
    }
    worst
}

pub fn scratchpad_update() -> f64 {
    let (mut store, decoder, _, p) = decoder_fixture(23, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights = random_mat(&mut rng, 5, D, 1.0);
    let mut ids = ids_with(&store, "decoder.attn");
    ids.extend(ids_with(&store, "decoder.conv"));
    ids.extend([p.states, p.query]);
    
    gradcheck(&mut store, &ids, 10, 8, |g| {
        let states = g.param(p.states);
        let q = g.param(p.query);
        let out = decoder.scratchpad_update(g, states, q);
        probe(g, out.states, &weights)
    })
}

pub fn biaffine_loss() -> f64 {
    let (mut store, _, detector, p) = decoder_fixture(24, 5);
    let mut gold = GoldGrid::new();
    gold.insert(Fragment::new(1, 2), 0);
    gold.insert(Fragment::new(3, 3), 1);
    let mut ids = ids_with(&store, "detector");
    ids.push(p.states);
    let mut worst = 0.0f64;
    for mask in [SpanMask::full(5), SpanMask::after(5, 0)] {
        let w = gradcheck(&mut store, &ids, 10, 9, |g| {
            let states = g.param(p.states);
            let logits = detector.logits(g, states);
            span_loss(g, logits, &gold, &mask)
        });
        worst = worst.max(w);
    }
    worst
}

pub fn decoder_path() -> f64 {
    let (mut store, decoder, detector, p) = decoder_fixture(25, 5);
    let mut gold = GoldGrid::new();
    gold.insert(Fragment::new(3, 4), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let last = store.add("probe.last", random_mat(&mut rng, 1, 6, 1.0));
    let mut ids = ids_with(&store, "decoder");
    ids.extend([p.states, last]);
    
    gradcheck(&mut store, &ids, 4, 10, |g| {
        let enc = EncoderOutput {
            states: g.param(p.states),
            reduced: g.param(p.states),
            final_state: g.param(last),
            len: 5,
        };
        let start = decoder.init_state(g, &enc);
        let first = decoder.advance(g, &start, 3).unwrap();
        let next = decoder.follow(g, &first, Fragment::new(0, 1), 1);
        let next = decoder.advance(g, &next, 3).unwrap();
        let logits = detector.logits(g, next.scratchpad);
        span_loss(g, logits, &gold, &SpanMask::after(5, 1))
    })
}

pub fn training_loss() -> f64 {
    let cfg = ModelConfig {
        types: vec!["T".into(), "U".into()],
        encoder: tiny_encoder(),
        decoder: tiny_decoder(),
        detector: DetectorConfig {
            mlp_dim: 3,
            ..DetectorConfig::default()
        },
    };
    let mut model = Model::new(cfg, 31).unwrap();
    let sentences = vec![
        super::sentence(5, vec![Entity::of("T", &[(0, 0), (2, 3)]), Entity::of("U", &[(1, 1)])]),
        super::sentence(4, vec![Entity::of("T", &[(0, 1), (3, 3)])]),
    ];
    let data = Dataset::new(&sentences);
    let mut instances = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        instances.extend(teacher_forcing_expand(i, s, model.types(), Mode::Discontinuous).unwrap());
    }
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut store = std::mem::take(&mut model.params);
    let arch = model.clone();
    
    gradcheck(&mut store, &ids, 2, 12, |g| {
        compute_loss(g, &arch, data, &instances, Mode::Discontinuous).unwrap()
    })
}
