use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            lr,
        }
    }

    /// Forgets the moment estimates and the step count.
    pub fn reset(&mut self) {
        self.m.iter_mut().chain(&mut self.v).for_each(|t| t.fill(T::zero()));
        self.t = 0;
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards. Non-finite gradients abort before anything is modified.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, opt: &mut AdamState<T>) -> Result<()> {
    if opt.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, store has {}",
            opt.m.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        if !params.grad(id).is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", params.name(id))));
        }
    }
    opt.t += 1;
    let t = opt.t as i32;
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::of(1.0 - opt.beta1.powi(t));
    let corr2 = T::of(1.0 - opt.beta2.powi(t));
    let (lr, eps) = (T::of(opt.lr), T::of(opt.eps));
    for id in params.ids().collect::<Vec<_>>() {
        let i = id.index();
        let (p, g) = params.pair_mut(id);
        let (m, v) = (opt.m[i].data_mut(), opt.v[i].data_mut());
        for (((pj, gj), mj), vj) in p.data_mut().iter_mut().zip(g.data_mut()).zip(m).zip(v) {
            let gv = *gj;
            *mj = b1 * *mj + c1 * gv;
            *vj = b2 * *vj + c2 * gv * gv;
            let mhat = *mj / corr1;
            let vhat = *vj / corr2;
            *pj -= lr * mhat / (vhat.sqrt() + eps);
            *gj = T::zero();
        }
    }
    Ok(())
}
