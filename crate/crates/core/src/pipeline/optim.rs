use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::Array;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warm-up from 0 to `peak` over `warmup` steps, then linear decay
/// to 0 at `total`. Steps beyond `total` give 0.
pub fn lr_schedule(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup) as f64;
    if span == 0.0 {
        return peak;
    }
    peak * (total - step) as f64 / span
}

/// Global L2 norm over every gradient.
pub fn global_norm(grads: &BTreeMap<String, Array>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Array>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// First and second moments per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            weight_decay,
        }
    }

    /// One update of every parameter named in `grads`. Decay is decoupled:
    /// `p ← p − lr·wd·p`, then the bias-corrected Adam step.
    pub fn step(
        &self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Array>,
        state: &mut AdamWState,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    step: state.step as usize + 1,
                    what: format!("gradient of {name}"),
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Config(format!("gradient shape mismatch for {name}")));
            }
            let m = state.m.entry(name.clone()).or_insert_with(|| Array::zeros(g.shape()));
            let v = state.v.entry(name.clone()).or_insert_with(|| Array::zeros(g.shape()));
            let mut next = (**p).clone();
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), next.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                pd[i] -= lr * self.weight_decay * pd[i];
                pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + self.eps);
            }
            params.set(name, next)?;
        }
        Ok(())
    }
}

impl AdamWState {
    pub fn round_to_f32(&mut self) {
        for a in self.m.values_mut().chain(self.v.values_mut()) {
            a.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}
