//! Teacher-forced instance construction, loss, optimizer and training loop.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{build_forest, supervisable_entities, AnnotatedSentence, Fragment, MAX_FRAGMENTS};
use crate::decoder::{DecodeConfig, DecoderState};
use crate::detector::{span_loss, GoldGrid, SpanMask};
use crate::eval::prf;
use crate::model::{Dataset, Model, ModelError, Preset};
use crate::params::ParamStore;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single-fragment entities only; one decoding step.
    Nested,
    /// Up to three fragments per entity.
    Discontinuous,
}

impl Mode {
    pub fn max_depth(self) -> usize {
        match self {
            Mode::Nested => 1,
            Mode::Discontinuous => MAX_FRAGMENTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Gradients are rescaled to at most this global norm.
    pub clip_norm: f64,
    /// Stop after this many epochs without a dev F1 improvement.
    pub patience: Option<usize>,
    /// Stop as soon as dev F1 reaches this value.
    pub stop_at_dev_f1: Option<f64>,
    pub threshold: f64,
    pub max_children: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Desk)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = TrainConfig {
            mode: Mode::Discontinuous,
            learning_rate: 1e-5,
            batch_size: 20,
            epochs: 80,
            seed: 0,
            weight_decay: 0.01,
            clip_norm: 5.0,
            patience: None,
            stop_at_dev_f1: None,
            threshold: 0.5,
            max_children: 8,
        };
        match preset {
            Preset::Paper => base,
            Preset::Desk => TrainConfig {
                learning_rate: 1e-3,
                batch_size: 8,
                epochs: 200,
                ..base
            },
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_depth: self.mode.max_depth(),
            threshold: self.threshold,
            max_children: self.max_children,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("train.learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("train.batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return Err("train.epochs must be at least 1".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err("train.clip_norm must be positive".into());
        }
        if self.weight_decay < 0.0 {
            return Err("train.weight_decay must not be negative".into());
        }
        self.decode_config().validate().map_err(|e| format!("train: {e}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("sentence {sentence}: entity type {label:?} is not among the model types")]
    UnknownType { sentence: usize, label: String },
    #[error("depth-{depth} instance in nested mode")]
    ModeViolation { depth: usize },
    #[error("non-finite {what} in epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One supervised decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInstance {
    pub sentence: usize,
    pub depth: usize,
    /// Type channel of the path; `None` at depth 1, which covers all channels.
    pub type_index: Option<usize>,
    /// Gold fragments already on the path, root first.
    pub parents: Vec<Fragment>,
    pub gold: GoldGrid,
    pub mask: SpanMask,
}

/// Instances for one sentence: a depth-1 step over all types and, in
/// discontinuous mode, one continuation step per gold node above depth 3.
/// A continuation with no gold children teaches the decoder to stop.
pub fn teacher_forcing_expand(
    sentence_index: usize,
    sentence: &AnnotatedSentence,
    types: &[String],
    mode: Mode,
) -> Result<Vec<StepInstance>, TrainError> {
    let (entities, _) = supervisable_entities(sentence);
    for e in &entities {
        if !types.contains(&e.label) {
            return Err(TrainError::UnknownType {
                sentence: sentence_index,
                label: e.label.clone(),
            });
        }
    }
    let forest = build_forest(entities).expect("supervisable entities fit the forest");
    let n = sentence.len();
    let type_of = |label: &str| types.iter().position(|t| t == label).expect("checked");
    let mut roots = GoldGrid::new();
    for (label, tree) in forest.trees() {
        for f in tree.keys() {
            roots.insert(*f, type_of(label));
        }
    }
    let mut out = vec![StepInstance {
        sentence: sentence_index,
        depth: 1,
        type_index: None,
        parents: Vec::new(),
        gold: roots,
        mask: SpanMask::full(n),
    }];
    if mode == Mode::Discontinuous {
        forest.for_each_node(|label, path, node| {
            if path.len() >= MAX_FRAGMENTS {
                return;
            }
            let k = type_of(label);
            let mut gold = GoldGrid::new();
            for f in node.children.keys() {
                gold.insert(*f, k);
            }
            let last = path[path.len() - 1];
            out.push(StepInstance {
                sentence: sentence_index,
                depth: path.len() + 1,
                type_index: Some(k),
                parents: path.to_vec(),
                gold,
                mask: SpanMask::after(n, last.end),
            });
        });
    }
    Ok(out)
}

/// Summed span loss of `instances`. Sentences are encoded once as a packed
/// batch and decoder states are shared between instances with a common path.
pub fn compute_loss(
    g: &mut Graph<'_>,
    model: &Model,
    data: Dataset<'_>,
    instances: &[StepInstance],
    mode: Mode,
) -> Result<Var, TrainError> {
    let max_depth = mode.max_depth();
    if let Some(bad) = instances.iter().find(|i| i.depth > max_depth) {
        return Err(TrainError::ModeViolation { depth: bad.depth });
    }
    if instances.is_empty() {
        return Ok(g.constant(Mat::scalar(0.0)));
    }
    let mut sentences: Vec<usize> = instances.iter().map(|i| i.sentence).collect();
    sentences.sort_unstable();
    sentences.dedup();
    let inputs: Vec<_> = sentences.iter().map(|&s| data.input(s)).collect();
    let enc = model.encode(g, &inputs).map_err(ModelError::from)?;
    let decoder = model.decoder();
    let mut terms = Vec::with_capacity(instances.len());
    for (slot, &s) in sentences.iter().enumerate() {
        let sent = enc.sentence(g, slot);
        let start = decoder.init_state(g, &sent);
        let first = decoder
            .advance(g, &start, max_depth)
            .expect("depth-1 step is always allowed");
        let mut memo: HashMap<(Option<usize>, Vec<Fragment>), DecoderState> = HashMap::new();
        memo.insert((None, Vec::new()), first);
        for inst in instances.iter().filter(|i| i.sentence == s) {
            let state = resolve(g, model, &mut memo, inst.type_index, &inst.parents, max_depth);
            let logits = model.detector().logits(g, state.scratchpad);
            terms.push(span_loss(g, logits, &inst.gold, &inst.mask));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    Ok(total)
}

fn resolve(
    g: &mut Graph<'_>,
    model: &Model,
    memo: &mut HashMap<(Option<usize>, Vec<Fragment>), DecoderState>,
    type_index: Option<usize>,
    parents: &[Fragment],
    max_depth: usize,
) -> DecoderState {
    let key = if parents.is_empty() {
        (None, Vec::new())
    } else {
        (type_index, parents.to_vec())
    };
    if let Some(s) = memo.get(&key) {
        return *s;
    }
    let k = type_index.expect("continuation steps carry a type");
    let (last, head) = parents.split_last().expect("depth-1 state is memoized");
    let parent = resolve(g, model, memo, type_index, head, max_depth);
    let forked = model.decoder().follow(g, &parent, *last, k);
    let state = model
        .decoder()
        .advance(g, &forked, max_depth)
        .expect("instance depth checked against the mode");
    memo.insert(key, state);
    state
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(params: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = params
            .iter()
            .map(|(_, _, m)| Mat::zeros(m.rows(), m.cols()))
            .collect();
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Option<Mat>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].as_ref().map(|g| g.data());
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= self.learning_rate * (update + self.weight_decay * p[j]);
            }
        }
    }
}

/// Scales gradients down to `max_norm` when their global norm exceeds it;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Mat>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.sum_squares())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per training sentence.
    pub train_loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Entity F1 of `model` on `data` against its gold entities.
pub fn dev_scores(
    model: &Model,
    data: Dataset<'_>,
    decode: &DecodeConfig,
    batch_size: usize,
) -> Result<crate::eval::Prf, ModelError> {
    let preds = model.predict(&data.inputs(), decode, batch_size)?;
    let preds: Vec<_> = preds.into_iter().map(|p| p.entities).collect();
    let golds: Vec<_> = data.sentences.iter().map(|s| s.entities().to_vec()).collect();
    Ok(prf(&preds, &golds).expect("one prediction list per sentence"))
}

/// Trains `model` in place. On return its parameters are the best dev-F1
/// snapshot, rounded to 32-bit precision so a saved checkpoint reloads to the
/// exact same values.
pub fn train(
    model: &mut Model,
    train_data: Dataset<'_>,
    dev_data: Dataset<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyCorpus("training"));
    }
    if dev_data.is_empty() {
        return Err(TrainError::EmptyCorpus("dev"));
    }
    let mut per_sentence = Vec::with_capacity(train_data.len());
    for (i, s) in train_data.sentences.iter().enumerate() {
        per_sentence.push(teacher_forcing_expand(i, s, model.types(), config.mode)?);
    }
    for (i, s) in dev_data.sentences.iter().enumerate() {
        for e in s.entities() {
            if model.type_index(&e.label).is_none() {
                return Err(TrainError::UnknownType {
                    sentence: i,
                    label: e.label.clone(),
                });
            }
        }
    }
    let decode = config.decode_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = AdamW::new(&model.params, config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut log = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let instances: Vec<StepInstance> = chunk
                .iter()
                .flat_map(|&s| per_sentence[s].iter().cloned())
                .collect();
            let mut grads = {
                let mut g = Graph::new(&model.params);
                let loss = compute_loss(&mut g, model, train_data, &instances, config.mode)?;
                let value = g.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch,
                        what: "loss",
                    });
                }
                epoch_loss += value;
                g.backward(loss).into_param_grads(model.params.len())
            };
            let norm = clip_global_norm(&mut grads, config.clip_norm);
            if !norm.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    what: "gradient",
                });
            }
            optimizer.update(&mut model.params, &grads);
            if !model.params.all_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    what: "parameter",
                });
            }
        }
        let mut snapshot = model.clone();
        snapshot.params.round_to_f32();
        let dev = dev_scores(&snapshot, dev_data, &decode, config.batch_size)?;
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            dev_p: dev.precision,
            dev_r: dev.recall,
            dev_f1: dev.f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|b| dev.f1 > b.1) {
            best = Some((epoch, dev.f1, snapshot.params));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.stop_at_dev_f1.is_some_and(|t| dev.f1 >= t) {
            break;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    let (best_epoch, best_dev_f1, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        best_epoch,
        best_dev_f1,
        epochs_run: log.len(),
        log,
    })
}
