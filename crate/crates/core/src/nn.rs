//! Recurrent cells, affine layers and dropout masks built on the tape.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Scalar, Var};

/// `x · W + b`
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), (1, out_dim)));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Var {
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

/// LSTM cell with gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), input_dim + hidden, 4 * hidden, rng);
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(F::one());
        let bias = store.add(format!("{name}.bias"), b);
        LstmCell {
            weight,
            bias,
            input_dim,
            hidden,
        }
    }

    /// One step; returns the new `(h, c)`.
    pub fn step<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let xh = g.concat_cols(&[x, h]);
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(xh, w);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, 2 * n);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * n, 3 * n);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * n, 4 * n);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// GRU cell: `r, u = σ(W[x; h] + b)`,
/// `n = tanh(W_x x + b_x + r ⊙ (W_h h + b_h))`, `h' = (1 − u) ⊙ n + u ⊙ h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub gates: Linear,
    pub input_cand: Linear,
    pub hidden_cand: Linear,
}

impl GruCell {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        GruCell {
            gates: Linear::new(store, &format!("{name}.gates"), input_dim + hidden, 2 * hidden, true, rng),
            input_cand: Linear::new(store, &format!("{name}.input_cand"), input_dim, hidden, true, rng),
            hidden_cand: Linear::new(store, &format!("{name}.hidden_cand"), hidden, hidden, true, rng),
        }
    }

    pub fn step<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, h: Var) -> Var {
        let n = self.hidden_cand.out_dim;
        let xh = g.concat_cols(&[x, h]);
        let z = self.gates.forward(g, xh);
        let z = g.sigmoid(z);
        let r = g.slice_cols(z, 0, n);
        let u = g.slice_cols(z, n, 2 * n);
        let hx = self.input_cand.forward(g, x);
        let hh = self.hidden_cand.forward(g, h);
        let gated = g.mul(r, hh);
        let pre = g.add(hx, gated);
        let cand = g.tanh(pre);
        // h' = n + u ⊙ (h − n)
        let diff = g.sub(h, cand);
        let upd = g.mul(u, diff);
        g.add(cand, upd)
    }
}

/// Source of dropout masks. `Eval` never drops.
pub enum Dropout<'r> {
    Eval,
    Train {
        rng: &'r mut ChaCha8Rng,
        embed: f64,
        rnn: f64,
    },
}

impl Dropout<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Dropout::Train { .. })
    }

    /// Inverted-dropout mask of the given shape, or `None` when not
    /// training or `rate` is zero. One mask row per sequence, reused at
    /// every time step, gives variational dropout.
    pub fn mask<F: Scalar>(&mut self, shape: (usize, usize), rate: f64) -> Option<Array2<F>> {
        match self {
            Dropout::Train { rng, .. } if rate > 0.0 => {
                let keep = F::of(1.0 / (1.0 - rate));
                Some(Array2::from_shape_simple_fn(shape, || {
                    if rng.random_bool(rate) {
                        F::zero()
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        }
    }

    pub fn embed_mask<F: Scalar>(&mut self, shape: (usize, usize)) -> Option<Array2<F>> {
        let rate = match self {
            Dropout::Train { embed, .. } => *embed,
            Dropout::Eval => 0.0,
        };
        self.mask(shape, rate)
    }

    pub fn rnn_mask<F: Scalar>(&mut self, shape: (usize, usize)) -> Option<Array2<F>> {
        let rate = match self {
            Dropout::Train { rnn, .. } => *rnn,
            Dropout::Eval => 0.0,
        };
        self.mask(shape, rate)
    }

    /// Applies a fresh rnn-rate mask to `x`.
    pub fn apply_rnn<F: Scalar>(&mut self, g: &mut Graph<'_, F>, x: Var) -> Var {
        match self.rnn_mask(g.shape(x)) {
            Some(m) => {
                let m = g.constant(m);
                g.mul(x, m)
            }
            None => x,
        }
    }

    /// Independent generator for work that must not perturb the main
    /// stream (e.g. sampling inside a loss).
    pub fn fork(&mut self) -> Option<ChaCha8Rng> {
        match self {
            Dropout::Train { rng, .. } => Some(ChaCha8Rng::seed_from_u64(rng.random())),
            Dropout::Eval => None,
        }
    }
}
