//! Shared helpers for integration tests: a finite-difference gradient oracle
//! and small fixtures.
#![allow(dead_code)]

pub mod grad_cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2f::autograd::{Graph, Var};
use s2f::corpus::{AnnotatedSentence, Entity};
use s2f::params::{ParamId, ParamStore};
use s2f::tensor::Mat;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn eval(store: &ParamStore, f: &dyn Fn(&mut Graph<'_>) -> Var) -> f64 {
    let mut g = Graph::inference(store);
    let out = f(&mut g);
    let v = g.value(out);
    assert_eq!(v.shape(), (1, 1), "gradcheck target must be a scalar");
    v.get(0, 0)
}

/// Compares backpropagated gradients with central differences on up to
/// `per_param` random coordinates of each listed parameter. Returns the
/// largest relative error seen.
pub fn gradcheck(
    store: &mut ParamStore,
    ids: &[ParamId],
    per_param: usize,
    seed: u64,
    f: impl Fn(&mut Graph<'_>) -> Var,
) -> f64 {
    let analytic: Vec<Mat> = {
        let mut g = Graph::new(store);
        let out = f(&mut g);
        let grads = g.backward(out);
        ids.iter()
            .map(|&id| {
                let p = store.get(id);
                grads
                    .wrt_param(id)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(p.rows(), p.cols()))
            })
            .collect()
    };
    // difference quotients lose about eps·|f|/STEP to rounding, so the floor
    // grows with the checked value
    let floor = FLOOR * eval(store, &f).abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (&id, grad) in ids.iter().zip(&analytic) {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            (0..per_param).map(|_| rng.gen_range(0..len)).collect()
        };
        for c in coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + STEP;
            let up = eval(store, &f);
            store.get_mut(id).data_mut()[c] = orig - STEP;
            let down = eval(store, &f);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = rel_err(grad.data()[c], numeric, floor);
            assert!(
                err.is_finite(),
                "{}[{c}]: analytic {} numeric {numeric}",
                store.name(id),
                grad.data()[c]
            );
            if err > worst && std::env::var_os("GRADCHECK_VERBOSE").is_some() {
                eprintln!("{}[{c}]: analytic {} numeric {numeric}", store.name(id), grad.data()[c]);
            }
            worst = worst.max(err);
        }
    }
    worst
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

pub fn words(n: usize, tag: &str) -> Vec<String> {
    (0..n).map(|i| format!("{tag}{i}")).collect()
}

pub fn sentence(n: usize, entities: Vec<Entity>) -> AnnotatedSentence {
    AnnotatedSentence::new(words(n, "w"), entities).unwrap()
}
