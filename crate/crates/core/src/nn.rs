//! Layers shared by the encoder, decoder and detector.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Mat;

/// `x · W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.xavier(fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros(1, fan_out)));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Mat::filled(1, dim, 1.0)),
            beta: store.add(format!("{name}.beta"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.layer_norm_rows(x, Self::EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let scaled = g.mul_row(n, gamma);
        g.add_row(scaled, beta)
    }
}

/// Hidden and cell state of an LSTM, each `rows × hidden`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Standard LSTM cell with gate order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let mut bias = Mat::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_input: store.add(format!("{name}.w_input"), init.xavier(input, 4 * hidden)),
            w_hidden: store.add(format!("{name}.w_hidden"), init.xavier(hidden, 4 * hidden)),
            bias: store.add(format!("{name}.bias"), bias),
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph<'_>, rows: usize) -> LstmState {
        LstmState {
            h: g.constant(Mat::zeros(rows, self.hidden)),
            c: g.constant(Mat::zeros(rows, self.hidden)),
        }
    }

    pub fn step(&self, g: &mut Graph<'_>, x: Var, state: LstmState) -> LstmState {
        let h = self.hidden;
        let wi = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let zx = g.matmul(x, wi);
        let zh = g.matmul(state.h, wh);
        let z = g.add(zx, zh);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, h);
        let f = g.slice_cols(z, h, h);
        let cand = g.slice_cols(z, 2 * h, h);
        let o = g.slice_cols(z, 3 * h, h);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}

/// Window indices for a length-preserving convolution over row segments.
///
/// Row `p` of a segment sees rows `p - (k-1)/2 ..` of the same segment; rows
/// outside the segment read as zeros, so packed sentences never mix.
pub fn same_windows(segments: &[(usize, usize)], kernel: usize) -> Vec<Option<usize>> {
    let left = (kernel - 1) / 2;
    let total: usize = segments.iter().map(|s| s.1).sum();
    let mut index = Vec::with_capacity(total * kernel);
    for &(start, len) in segments {
        for p in 0..len {
            for k in 0..kernel {
                let pos = p as isize + k as isize - left as isize;
                index.push((pos >= 0 && (pos as usize) < len).then(|| start + pos as usize));
            }
        }
    }
    index
}

/// One-dimensional convolution with same padding, stored as a `(kernel·in) × out` matrix.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub linear: Linear,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
    ) -> Self {
        Conv1d {
            linear: Linear::new(store, init, name, kernel * input, output, true),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, segments: &[(usize, usize)]) -> Var {
        let windows = g.gather(x, same_windows(segments, self.kernel), self.kernel);
        self.linear.forward(g, windows)
    }
}

/// Activation used inside the detector MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, 0.1),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_windows_keep_segments_apart() {
        let w = same_windows(&[(0, 2), (2, 1)], 3);
        assert_eq!(
            w,
            vec![
                None,
                Some(0),
                Some(1),
                Some(0),
                Some(1),
                None,
                None,
                Some(2),
                None
            ]
        );
    }

    #[test]
    fn even_kernel_windows_lean_right() {
        let w = same_windows(&[(0, 2)], 4);
        assert_eq!(w.len(), 8);
        assert_eq!(&w[..4], &[None, Some(0), Some(1), None]);
    }

    #[test]
    fn zero_lstm_stays_at_zero() {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let cell = LstmCell::new(&mut store, &mut Init::new(&mut rng), "l", 3, 2);
        for id in store.ids().collect::<Vec<_>>() {
            let m = store.get_mut(id);
            m.data_mut().fill(0.0);
        }
        let mut g = Graph::inference(&store);
        let x = g.constant(Mat::zeros(1, 3));
        let s0 = cell.zero_state(&mut g, 1);
        let s1 = cell.step(&mut g, x, s0);
        assert!(g.value(s1.h).data().iter().all(|v| *v == 0.0));
        assert!(g.value(s1.c).data().iter().all(|v| *v == 0.0));
    }
}
