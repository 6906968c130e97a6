use crate::numkit::{ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// The decayed learning rate never drops below this fraction of the start.
pub const LR_FLOOR_FRACTION: f64 = 0.01;

/// `lr0 · max(1 − iter/total, 0.01)`.
pub fn learning_rate(lr0: f64, iteration: u64, total: u64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let linear = 1.0 - iteration as f64 / total as f64;
    lr0 * linear.max(LR_FLOOR_FRACTION)
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay, using the
/// gradients accumulated in `store`. Gradients are left untouched.
pub fn optimizer_step(store: &mut ParamStore, state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.data();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (k, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            let update = (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            *w -= lr * (update + weight_decay * *w);
        }
    }
}
