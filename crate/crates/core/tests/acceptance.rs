//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2f::autograd::Graph;
use s2f::checkpoint::{to_bytes, CheckpointMeta};
use s2f::corpus::{
    build_forest, flatten_forest, generate_synthetic, type_label, write_corpus, AnnotatedSentence,
    Entity, Fragment, SynthConfig,
};
use s2f::decoder::{DecodeConfig, DecoderConfig};
use s2f::detector::{decode_grid, span_loss, Detector, DetectorConfig, GoldGrid, ScoreGrid, SpanMask};
use s2f::encoder::{EncoderConfig, EncoderInput};
use s2f::eval::{discontinuous_only, discontinuous_subsets, prf, throughput, Prf};
use s2f::model::{Dataset, Model, ModelConfig, Prediction, Preset};
use s2f::params::{Init, ParamStore};
use s2f::tensor::Mat;
use s2f::training::{train, TrainConfig};

const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(10);
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const GRAD_TOL: f64 = 1e-4;
const EXACT_TOL: f64 = 1e-9;
const OVERFIT_F1: f64 = 0.95;
const OVERFIT_DISC_F1: f64 = 0.90;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_SEED: u64 = 3;

type Check = Result<String, String>;
type GradCase = (&'static str, fn() -> f64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(id: usize, name: &str, failures: &mut usize, f: impl FnOnce() -> Check) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
        }
    }
}

// ---------------------------------------------------------------- fixtures

fn random_entity(rng: &mut ChaCha8Rng, labels: &[&str]) -> Entity {
    let parts = rng.gen_range(1..=3);
    let mut frags = Vec::new();
    let mut next = rng.gen_range(0..5);
    for _ in 0..parts {
        let start = if frags.is_empty() { next } else { next + rng.gen_range(0..3) };
        let end = start + rng.gen_range(0..3);
        frags.push(Fragment::new(start, end));
        next = end + 1;
    }
    Entity::new(*labels.choose(rng).unwrap(), frags).unwrap()
}

/// Base entities plus prefix extensions of some of them.
fn random_entity_set(rng: &mut ChaCha8Rng) -> BTreeSet<Entity> {
    let labels = ["A", "B", "C"];
    let base: Vec<Entity> = (0..rng.gen_range(0..8)).map(|_| random_entity(rng, &labels)).collect();
    let mut set: BTreeSet<Entity> = base.iter().cloned().collect();
    if base.is_empty() {
        return set;
    }
    for _ in 0..rng.gen_range(0..4) {
        let e = base.choose(rng).unwrap();
        if e.fragments().len() >= 3 {
            continue;
        }
        let mut frags = e.fragments().to_vec();
        let start = frags.last().unwrap().end + 1 + rng.gen_range(0..3);
        frags.push(Fragment::new(start, start + rng.gen_range(0..2)));
        set.insert(Entity::new(e.label.clone(), frags).unwrap());
    }
    set
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn small_config(types: Vec<String>) -> ModelConfig {
    ModelConfig {
        types,
        encoder: EncoderConfig {
            layers: 1,
            hidden_dim: 16,
            heads: 2,
            ffn_dim: 16,
            reduced_dim: 8,
            char_filters: 4,
            ..EncoderConfig::desk()
        },
        decoder: DecoderConfig {
            hidden_dim: 8,
            type_dim: 4,
            attention_dim: 8,
            ..DecoderConfig::desk()
        },
        detector: DetectorConfig {
            mlp_dim: 8,
            ..DetectorConfig::default()
        },
    }
}

fn overfit_corpus() -> (Vec<AnnotatedSentence>, SynthConfig) {
    let cfg = SynthConfig {
        sentences: 50,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg, OVERFIT_SEED).expect("feasible synth config");
    (corpus.sentences, cfg)
}

struct Overfit {
    model: Model,
    sentences: Vec<AnnotatedSentence>,
}

// ---------------------------------------------------------------- criteria

fn forest_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut shared, mut nested, mut overlapping) = (0, 0, 0);
    for trial in 0..1000 {
        let set = random_entity_set(&mut rng);
        let ents: Vec<&Entity> = set.iter().collect();
        for a in &ents {
            for b in &ents {
                if a == b {
                    continue;
                }
                if a.label == b.label && b.fragments().starts_with(&a.fragments()[..1]) {
                    shared += 1;
                }
                if a.fragments().len() == 1
                    && b.fragments().len() == 1
                    && a.fragments()[0] != b.fragments()[0]
                    && a.fragments()[0].start <= b.fragments()[0].start
                    && b.fragments()[0].end <= a.fragments()[0].end
                {
                    nested += 1;
                } else if a.shares_token_with(b) {
                    overlapping += 1;
                }
            }
        }
        let forest = build_forest(set.iter()).map_err(|e| format!("trial {trial}: {e}"))?;
        let back: BTreeSet<Entity> = flatten_forest(&forest).into_iter().collect();
        ensure(back == set, || format!("trial {trial}: {set:?} came back as {back:?}"))?;
    }
    let elapsed = start.elapsed();
    ensure(shared > 0 && nested > 0 && overlapping > 0, || {
        format!("generator lacks variety: shared {shared}, nested {nested}, overlapping {overlapping}")
    })?;
    ensure(elapsed < ROUND_TRIP_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("1000 sets exact in {:.2}s", elapsed.as_secs_f64()))
}

fn biaffine_oracle() -> Check {
    // one-unit MLPs with identity weights make every logit hand-computable:
    // logit(i, j) = head_i · u · tail_j + head_i · w
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = DetectorConfig {
        mlp_dim: 1,
        ..DetectorConfig::default()
    };
    let det = Detector::new(&mut store, &mut Init::new(&mut rng), &cfg, 1, 1);
    let (head_w, tail_w, u, w) = (1.0, 0.5, 2.0, 0.5);
    for (name, v) in [
        ("detector.head.weight", head_w),
        ("detector.head.bias", 0.0),
        ("detector.tail.weight", tail_w),
        ("detector.tail.bias", 0.0),
        ("detector.bilinear", u),
        ("detector.linear", w),
    ] {
        let id = store.id(name).ok_or_else(|| format!("no parameter {name}"))?;
        store.get_mut(id).data_mut()[0] = v;
    }
    let x = [1.0, 2.0];
    let logits = {
        let mut g = Graph::inference(&store);
        let states = g.constant(Mat::from_vec(2, 1, x.to_vec()));
        let l = det.logits(&mut g, states);
        g.value(l).clone()
    };
    let grid = ScoreGrid::from_logits(&logits);
    for i in 0..2 {
        for j in 0..2 {
            let hand = x[i] * head_w * u * x[j] * tail_w + x[i] * head_w * w;
            ensure((logits.get(i, j) - hand).abs() < EXACT_TOL, || {
                format!("logit ({i},{j}) = {} vs {hand}", logits.get(i, j))
            })?;
        }
    }
    ensure((logits.get(0, 1) - 2.5).abs() < EXACT_TOL, || format!("logit {}", logits.get(0, 1)))?;
    let p = grid.prob(0, 0, 1);
    ensure((p - sigmoid(2.5)).abs() < EXACT_TOL, || format!("p = {p}"))?;
    ensure((p - 0.9241).abs() < 1e-4, || format!("p = {p}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let raw: Vec<f64> = (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let grid = ScoreGrid::from_logits(&Mat::from_vec(5, 10, raw.clone()));
        let threshold = rng.gen_range(0.0..0.95);
        let min_start = rng.gen_range(0..5);
        let max_children = rng.gen_range(1..20);
        let mask = SpanMask { n: 5, min_start };
        for k in 0..2 {
            let got: Vec<(Fragment, f64)> = decode_grid(&grid, k, &mask, threshold, max_children);
            let mut all = Vec::new();
            for i in 0..5 {
                for j in 0..5 {
                    let q = sigmoid(raw[i * 10 + k * 5 + j]);
                    if i >= min_start && i <= j && q > threshold {
                        all.push((Fragment::new(i, j), q));
                    }
                }
            }
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(max_children);
            let same = got.len() == all.len()
                && got.iter().zip(&all).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < EXACT_TOL);
            ensure(same, || format!("trial {trial}, type {k}: {got:?} vs {all:?}"))?;
        }
    }
    Ok(format!("p = {p:.10}; 1000 random grids match enumeration"))
}

fn bce_oracle() -> Check {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let logits = g.constant(Mat::zeros(2, 2));
    let l = span_loss(&mut g, logits, &GoldGrid::new(), &SpanMask::full(2));
    let got = g.value(l).get(0, 0);
    let want = 3.0 * std::f64::consts::LN_2;
    ensure((got - want).abs() < EXACT_TOL, || format!("{got} vs {want}"))?;
    Ok(format!("loss {got:.10}"))
}

fn gradient_checks() -> Check {
    use common::grad_cases as c;
    let start = Instant::now();
    let cases: [GradCase; 8] = [
        ("encoder stack", c::encoder_stack),
        ("token embeddings", c::token_embeddings),
        ("lstm step", c::lstm_step),
        ("fragment embedding", c::fragment_embedding),
        ("scratchpad update", c::scratchpad_update),
        ("biaffine loss", c::biaffine_loss),
        ("decoder path", c::decoder_path),
        ("training loss", c::training_loss),
    ];
    let mut worst = 0.0f64;
    for (name, case) in cases {
        let err = case();
        ensure(err < GRAD_TOL, || format!("{name}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < GRADCHECK_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("8 cases, worst relative error {worst:.2e}"))
}

fn overfit(slot: &mut Option<Overfit>) -> Check {
    let start = Instant::now();
    let (sentences, cfg) = overfit_corpus();
    let ents: Vec<&Entity> = sentences.iter().flat_map(|s| s.entities()).collect();
    let frags = |n: usize| ents.iter().filter(|e| e.fragments().len() == n).count();
    let mut nested = 0;
    let mut overlapping = 0;
    for s in &sentences {
        for a in s.entities() {
            for b in s.entities() {
                if a == b || !a.shares_token_with(b) {
                    continue;
                }
                let (ta, tb): (BTreeSet<usize>, BTreeSet<usize>) = (a.tokens().collect(), b.tokens().collect());
                if ta.is_subset(&tb) || tb.is_subset(&ta) {
                    nested += 1;
                } else {
                    overlapping += 1;
                }
            }
        }
    }
    let variety = [
        ("flat", frags(1)),
        ("two-fragment", frags(2)),
        ("three-fragment", frags(3)),
        ("nested", nested),
        ("overlapping", overlapping),
    ];
    if let Some((kind, _)) = variety.iter().find(|(_, c)| *c == 0) {
        return Err(format!("corpus has no {kind} entities"));
    }

    let types: Vec<String> = (0..cfg.num_types).map(type_label).collect();
    let mut model = Model::new(
        ModelConfig {
            types,
            ..ModelConfig::preset(Preset::Desk)
        },
        OVERFIT_SEED,
    )
    .map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        seed: OVERFIT_SEED,
        stop_at_dev_f1: Some(1.0),
        ..TrainConfig::preset(Preset::Desk)
    };
    let data = Dataset::new(&sentences);
    let outcome = train(&mut model, data, data, &tc, |_| {}).map_err(|e| e.to_string())?;
    let preds = model
        .predict(&data.inputs(), &tc.decode_config(), tc.batch_size)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pred_lists: Vec<Vec<Entity>> = preds.into_iter().map(|p| p.entities).collect();
    let gold_lists: Vec<Vec<Entity>> = sentences.iter().map(|s| s.entities().to_vec()).collect();
    let all = prf(&pred_lists, &gold_lists).unwrap();
    let disc = discontinuous_subsets(&pred_lists, &sentences).unwrap().mentions;
    *slot = Some(Overfit {
        model,
        sentences: sentences.clone(),
    });
    let detail = format!(
        "F1 {:.4}, discontinuous-only F1 {:.4} after {} epochs (best {}) in {:.0}s",
        all.f1,
        disc.f1,
        outcome.epochs_run,
        outcome.best_epoch,
        elapsed.as_secs_f64()
    );
    ensure(all.f1 >= OVERFIT_F1 && disc.f1 >= OVERFIT_DISC_F1 && elapsed < OVERFIT_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn nested_mode_contract() -> Check {
    let types: Vec<String> = vec!["A".into(), "B".into(), "C".into()];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut trials = 0;
    let mut emitted = 0;
    for seed in 0..100u64 {
        let model = Model::new(small_config(types.clone()), seed).map_err(|e| e.to_string())?;
        let sentences: Vec<Vec<String>> = (0..100)
            .map(|_| {
                let n = rng.gen_range(1..=12);
                (0..n).map(|_| format!("w{}", rng.gen_range(0..50))).collect()
            })
            .collect();
        let inputs: Vec<EncoderInput<'_>> = sentences.iter().map(|t| EncoderInput::tokens(t)).collect();
        let decode = DecodeConfig {
            threshold: [0.5, 0.3, 0.05][seed as usize % 3],
            ..DecodeConfig::nested()
        };
        let preds = model.predict(&inputs, &decode, 20).map_err(|e| e.to_string())?;
        for p in &preds {
            trials += 1;
            emitted += p.entities.len();
            if let Some(e) = p.entities.iter().find(|e| e.is_discontinuous()) {
                return Err(format!("trial {trials}: nested mode emitted {e:?}"));
            }
            if let Some(edge) = p.edges.iter().find(|e| e.depth > 1) {
                return Err(format!("trial {trials}: nested mode followed {edge:?}"));
            }
        }
    }
    ensure(emitted > 0, || "no entity was ever emitted; the check is vacuous".into())?;
    Ok(format!("{trials} trials, {emitted} entities, none multi-fragment"))
}

fn mask_invariant(slot: &Option<Overfit>) -> Check {
    let o = slot.as_ref().ok_or("overfit model unavailable")?;
    let data = Dataset::new(&o.sentences);
    let mut checked = 0;
    for threshold in [0.5, 0.3, 0.1, 0.01] {
        let decode = DecodeConfig {
            threshold,
            ..DecodeConfig::discontinuous()
        };
        let preds: Vec<Prediction> = o.model.predict(&data.inputs(), &decode, 8).map_err(|e| e.to_string())?;
        for (s, p) in preds.iter().enumerate() {
            for edge in p.edges.iter().filter(|e| e.depth >= 2) {
                let parent = edge.parent.ok_or_else(|| format!("sentence {s}: {edge:?} has no parent"))?;
                ensure(edge.child.start > parent.end, || {
                    format!("sentence {s}, threshold {threshold}: {edge:?}")
                })?;
                checked += 1;
            }
        }
    }
    ensure(checked > 0, || "no deeper edges decoded; the check is vacuous".into())?;
    Ok(format!("{checked} depth>=2 links, zero violations"))
}

fn exhaustive_prf(preds: &[Vec<Entity>], golds: &[Vec<Entity>]) -> (usize, usize, usize) {
    let (mut p, mut g, mut c) = (0, 0, 0);
    for (ps, gs) in preds.iter().zip(golds) {
        let mut up: Vec<&Entity> = Vec::new();
        for e in ps {
            if !up.contains(&e) {
                up.push(e);
            }
        }
        let mut ug: Vec<&Entity> = Vec::new();
        for e in gs {
            if !ug.contains(&e) {
                ug.push(e);
            }
        }
        p += up.len();
        g += ug.len();
        c += up
            .iter()
            .filter(|a| ug.iter().any(|b| a.label == b.label && a.fragments() == b.fragments()))
            .count();
    }
    (p, g, c)
}

fn counts(s: &Prf) -> (usize, usize, usize) {
    (s.predicted, s.gold, s.correct)
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = ["A", "B"];
    for case in 0..1000 {
        let sents = rng.gen_range(1..6);
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for _ in 0..sents {
            let pool: Vec<Entity> = (0..6).map(|_| random_entity(&mut rng, &labels)).collect();
            let pick = |rng: &mut ChaCha8Rng| -> Vec<Entity> {
                (0..rng.gen_range(0..5)).map(|_| pool.choose(rng).unwrap().clone()).collect()
            };
            preds.push(pick(&mut rng));
            golds.push(pick(&mut rng));
        }
        let got = prf(&preds, &golds).map_err(|e| e.to_string())?;
        let (p, g, c) = exhaustive_prf(&preds, &golds);
        ensure(counts(&got) == (p, g, c), || format!("case {case}: {got:?} vs {:?}", (p, g, c)))?;
        let precision = if p == 0 { 0.0 } else { c as f64 / p as f64 };
        let recall = if g == 0 { 0.0 } else { c as f64 / g as f64 };
        let f1 = if c == 0 { 0.0 } else { 2.0 * c as f64 / (p + g) as f64 };
        ensure(
            (got.precision - precision).abs() < EXACT_TOL
                && (got.recall - recall).abs() < EXACT_TOL
                && (got.f1 - f1).abs() < EXACT_TOL,
            || format!("case {case}: {got:?}"),
        )?;
    }

    // ten crafted sentences; expected counts worked out by hand
    let e = Entity::of;
    let rows: Vec<(Vec<Entity>, Vec<Entity>)> = vec![
        (vec![e("T", &[(0, 0), (2, 3)]), e("U", &[(5, 5)])], vec![e("T", &[(0, 0), (2, 3)]), e("U", &[(5, 5)])]),
        (vec![e("T", &[(1, 2)])], vec![e("T", &[(1, 2)])]),
        (vec![e("T", &[(0, 0), (3, 3), (5, 6)])], vec![e("T", &[(0, 0), (3, 3)])]),
        (vec![e("U", &[(0, 1)]), e("U", &[(1, 2)])], vec![]),
        (vec![e("T", &[(0, 1), (4, 4)])], vec![e("T", &[(0, 1), (4, 4)]), e("U", &[(2, 2)])]),
        (vec![], vec![e("T", &[(1, 1), (3, 3)])]),
        (vec![e("T", &[(2, 2)])], vec![e("U", &[(2, 2)])]),
        (vec![e("U", &[(0, 0), (2, 2)]), e("T", &[(0, 2)])], vec![e("T", &[(0, 2)])]),
        (vec![e("T", &[(3, 4)])], vec![e("T", &[(3, 4)])]),
        (vec![e("T", &[(0, 0), (4, 5)])], vec![e("T", &[(0, 0), (4, 5)])]),
    ];
    let golds: Vec<AnnotatedSentence> = rows
        .iter()
        .map(|(g, _)| common::sentence(8, g.clone()))
        .collect();
    let preds: Vec<Vec<Entity>> = rows.iter().map(|(_, p)| p.clone()).collect();
    let gold_lists: Vec<Vec<Entity>> = rows.iter().map(|(g, _)| g.clone()).collect();
    let overall = prf(&preds, &gold_lists).unwrap();
    let subsets = discontinuous_subsets(&preds, &golds).unwrap();
    ensure(counts(&overall) == (11, 12, 7), || format!("overall {overall:?}"))?;
    ensure(subsets.sentences == 5, || format!("{} discontinuous sentences", subsets.sentences))?;
    ensure(counts(&subsets.sentence_subset) == (7, 7, 5), || {
        format!("sentence subset {:?}", subsets.sentence_subset)
    })?;
    ensure(counts(&subsets.mentions) == (5, 5, 3), || format!("mentions {:?}", subsets.mentions))?;
    ensure((subsets.mentions.f1 - 0.6).abs() < EXACT_TOL, || format!("mentions {:?}", subsets.mentions))?;
    let only: usize = preds.iter().map(|p| discontinuous_only(p).len()).sum();
    ensure(only == 5, || format!("{only} discontinuous predictions"))?;
    Ok("1000 random cases match; crafted subset counts exact".into())
}

fn determinism() -> Check {
    let cfg = SynthConfig {
        sentences: 20,
        ..SynthConfig::default()
    };
    let sentences = generate_synthetic(&cfg, 9).map_err(|e| e.to_string())?.sentences;
    let types: Vec<String> = (0..cfg.num_types).map(type_label).collect();
    let tc = TrainConfig {
        epochs: 3,
        seed: 9,
        ..TrainConfig::preset(Preset::Desk)
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut model = Model::new(small_config(types.clone()), 9).map_err(|e| e.to_string())?;
        let data = Dataset::new(&sentences);
        let out = train(&mut model, data, data, &tc, |_| {}).map_err(|e| e.to_string())?;
        let meta = CheckpointMeta {
            epoch: out.best_epoch,
            dev_f1: out.best_dev_f1,
            seed: tc.seed,
        };
        let ckpt = to_bytes(&model, Some(&tc), &meta);
        let decode = DecodeConfig {
            threshold: 0.2,
            ..tc.decode_config()
        };
        let preds = model.predict(&data.inputs(), &decode, 4).map_err(|e| e.to_string())?;
        let records: Vec<AnnotatedSentence> = sentences
            .iter()
            .zip(preds)
            .map(|(s, p)| s.with_entities(p.entities).unwrap())
            .collect();
        let path = dir.path().join(format!("{tag}.jsonl"));
        write_corpus(&path, &records).map_err(|e| e.to_string())?;
        Ok((ckpt, std::fs::read(&path).map_err(|e| e.to_string())?))
    };
    let (c1, p1) = run("first")?;
    let (c2, p2) = run("second")?;
    ensure(c1 == c2, || "checkpoints differ".into())?;
    ensure(p1 == p2, || "prediction files differ".into())?;
    Ok(format!("checkpoints ({} bytes) and predictions ({} bytes) identical", c1.len(), p1.len()))
}

fn throughput_harness(slot: &Option<Overfit>) -> Check {
    let o = slot.as_ref().ok_or("overfit model unavailable")?;
    let cfg = SynthConfig {
        sentences: 200,
        ..SynthConfig::default()
    };
    let sentences = generate_synthetic(&cfg, 10).map_err(|e| e.to_string())?.sentences;
    let data = Dataset::new(&sentences);
    let decode = DecodeConfig::discontinuous();
    // one worker so the comparison measures batching, not parallel batches
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let best = |batch: usize| -> Result<f64, String> {
        let mut best = 0.0f64;
        for _ in 0..3 {
            let t = pool
                .install(|| throughput(&o.model, data, &decode, batch))
                .map_err(|e| e.to_string())?;
            ensure(t.sentences == 200 && t.sentences_per_sec.is_finite(), || format!("{t:?}"))?;
            best = best.max(t.sentences_per_sec);
        }
        Ok(best)
    };
    let one = best(1)?;
    let twenty = best(20)?;
    let detail = format!("batch 1: {one:.1} sent/s, batch 20: {twenty:.1} sent/s");
    ensure(twenty >= one, || detail.clone())?;
    Ok(detail)
}

fn main() {
    // the test runner passes flags such as --nocapture or filters; ignore them
    let mut failures = 0;
    let mut trained = None;
    run(1, "forest round trip", &mut failures, forest_round_trip);
    run(2, "biaffine oracle", &mut failures, biaffine_oracle);
    run(3, "bce oracle", &mut failures, bce_oracle);
    run(4, "gradient checks", &mut failures, gradient_checks);
    run(5, "overfit", &mut failures, || overfit(&mut trained));
    run(6, "nested mode contract", &mut failures, nested_mode_contract);
    run(7, "mask invariant", &mut failures, || mask_invariant(&trained));
    run(8, "metric oracle", &mut failures, metric_oracle);
    run(9, "determinism", &mut failures, determinism);
    run(10, "throughput", &mut failures, || throughput_harness(&trained));
    println!("{} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
