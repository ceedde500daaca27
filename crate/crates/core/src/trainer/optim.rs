use crate::error::{Error, Result};
use crate::model::{ParamGroup, ParamSet};
use crate::tensor::{Gradients, SeededRng, Tensor};

use super::TrainConfig;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub encoder: f64,
    pub answering: f64,
}

impl LearningRates {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Answering => self.answering,
        }
    }
}

/// Initial rates scaled by `decay^epoch`.
pub fn decay_learning_rates(config: &TrainConfig, epoch: usize) -> LearningRates {
    let f = config.lr_decay.powi(epoch as i32);
    LearningRates {
        encoder: config.lr_encoder * f,
        answering: config.lr_answering * f,
    }
}

/// Adam moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Each parameter uses the rate of its group.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: LearningRates,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "adam_step: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let rate = lr.for_group(params.param(id).group);
        let g = &grads[i];
        let value = params.get_mut(id);
        if !value.same_shape(g) || !value.same_shape(&state.m[i]) {
            return Err(Error::Shape {
                op: "adam_step",
                left: value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in value.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Gradients for every parameter in set order; parameters the loss never
/// touched get zeros.
pub fn collect_grads(params: &ParamSet, grads: &Gradients) -> Vec<Tensor> {
    params
        .iter()
        .map(|(id, p)| {
            grads
                .param(id.index())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect()
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

/// Standard deviation of the annealed noise, `sqrt(eta / (1 + t)^0.55)`.
pub fn noise_std(noise_eta: f64, t: u64) -> f64 {
    (noise_eta / (1.0 + t as f64).powf(0.55)).sqrt()
}

/// Adds i.i.d. Gaussian noise with variance `eta / (1 + t)^0.55` to every
/// gradient entry. Draws nothing when `eta` is zero.
pub fn add_gradient_noise(grads: &mut [Tensor], t: u64, noise_eta: f64, rng: &mut SeededRng) {
    if noise_eta == 0.0 {
        return;
    }
    let sigma = noise_std(noise_eta, t);
    for g in grads.iter_mut() {
        for x in g.data_mut() {
            *x += sigma * rng.normal();
        }
    }
}
