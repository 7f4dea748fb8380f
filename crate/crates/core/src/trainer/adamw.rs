//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ifmodel::{FreezeMask, ModelParameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && [self.lr, self.eps, self.weight_decay].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// First and second moments of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Optimizer state; moments exist only for trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamWHyper,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, mask: &FreezeMask, hyper: AdamWHyper) -> Self {
        let moments = params
            .iter()
            .filter(|p| !mask.is_frozen(&p.name))
            .map(|p| {
                let z = Tensor::zeros(p.tensor.shape());
                (p.name.clone(), Moments { m: z.clone(), v: z })
            })
            .collect();
        Self { hyper, step: 0, moments }
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }
}

/// One AdamW update of every trainable parameter:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// m̂ = m/(1−β₁ᵗ)            v̂ = v/(1−β₂ᵗ)
/// w ← w·(1 − lr·λ) − lr·m̂/(√v̂ + ε)
/// ```
///
/// Parameters without moments (frozen) are not touched.
pub fn adamw_step(
    params: &mut ModelParameters,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
) -> Result<()> {
    for name in state.moments.keys() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Usage(format!("missing gradient for trainable parameter {name}")))?;
        let w = params
            .get(name)
            .ok_or_else(|| Error::Usage(format!("optimizer state names unknown parameter {name}")))?;
        if g.shape() != w.shape() {
            return Err(Error::TensorShape {
                name: name.clone(),
                expected: w.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    for (name, mo) in state.moments.iter_mut() {
        let w = params.get_mut(name).expect("checked above");
        adamw_update(w.data_mut(), grads[name].data(), mo, &state.hyper, state.step);
    }
    Ok(())
}

/// Applies one AdamW update at (1-based) step `t` to a flat buffer.
pub fn adamw_update(w: &mut [f64], g: &[f64], mo: &mut Moments, h: &AdamWHyper, t: u64) {
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    let decay = 1.0 - h.lr * h.weight_decay;
    let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
    for i in 0..w.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] = w[i] * decay - h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
