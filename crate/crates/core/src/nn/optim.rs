use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g`, `w <- w - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<S = f32> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        }
        let lr = S::from_f64(self.lr);
        let mu = S::from_f64(self.momentum);
        for (i, v) in self.velocity.iter_mut().enumerate() {
            let id = ParamId(i);
            let g = grads.get(id).data();
            let w = params.get_mut(id).data_mut();
            for ((vv, ww), &gg) in v.data_mut().iter_mut().zip(w.iter_mut()).zip(g) {
                *vv = mu * *vv + gg;
                *ww -= lr * *vv;
            }
        }
    }
}

/// One plain update `params -= lr * grads` applied through [`Sgd`].
pub fn sgd_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &Gradients<S>,
    opt: &mut Sgd<S>,
) {
    opt.step(params, grads)
}
