use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

/// Serializable optimizer moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamStore<F>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.ids().map(|id| Array2::zeros(params.get(id).dim())).collect(),
            v: params.ids().map(|id| Array2::zeros(params.get(id).dim())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let corr1 = F::of(1.0 - self.beta1.powi(t));
        let corr2 = F::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (F::of(self.lr), F::of(self.eps));
        let one = F::one();
        for (id, g) in grads.iter() {
            let i = id.index();
            Zip::from(params.get_mut(id))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    pub fn state(&self) -> AdamState {
        AdamState {
            step: self.step,
            lr: self.lr,
        }
    }

    /// First and second moments, in parameter order.
    pub fn moments(&self) -> (&[Array2<F>], &[Array2<F>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, state: &AdamState, m: Vec<Array2<F>>, v: Vec<Array2<F>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.step = state.step;
        self.lr = state.lr;
        self.m = m;
        self.v = v;
    }
}
