use serde::{Deserialize, Serialize};

use super::{ParamGrads, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    clip: Option<T>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, clip: Option<f64>, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            lr: T::of(lr),
            clip: clip.map(T::of),
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::of(lr);
    }

    /// Applies one update in place; returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut ParamGrads<T>) -> T {
        let norm = match self.clip {
            Some(max) => grads.clip_global_norm(max),
            None => grads.global_norm(),
        };
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.first[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let mu = T::of(momentum);
                    for ((p, m), &g) in p.iter_mut().zip(m.iter_mut()).zip(g) {
                        *m = mu * *m + g;
                        *p -= self.lr * *m;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                    let c1 = T::one() - b1.powi(self.steps);
                    let c2 = T::one() - b2.powi(self.steps);
                    let v = self.second[id.index()].data_mut();
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *p -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descent(kind: OptimizerKind, lr: f64) -> f64 {
        // minimise (x - 3)^2 from x = 0
        let mut store = ParamStore::<f64>::new();
        let x = store.insert_zeros("x", &[1]);
        let mut opt = Optimizer::new(kind, lr, Some(5.0), &store);
        for _ in 0..500 {
            let mut grads = ParamGrads::zeros_like(&store);
            let xv = store.get(x).data()[0];
            grads.get_mut(x).data_mut()[0] = 2.0 * (xv - 3.0);
            opt.step(&mut store, &mut grads);
        }
        store.get(x).data()[0]
    }

    #[test]
    fn sgd_and_adam_converge_on_quadratic() {
        assert!((quadratic_descent(OptimizerKind::Sgd { momentum: 0.0 }, 0.1) - 3.0).abs() < 1e-6);
        assert!((quadratic_descent(OptimizerKind::default(), 0.05) - 3.0).abs() < 1e-4);
        assert!((quadratic_descent(OptimizerKind::adam(), 0.05) - 3.0).abs() < 1e-3);
    }
}
