//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Error, Result, Tensor};
use crate::scalar::Scalar;

/// One trainable tensor with its Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    pub value: Arc<Tensor<S>>,
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub steps: u64,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value: Arc::new(value),
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            steps: 0,
        }
    }
}

/// Named parameters with per-parameter optimizer state, kept in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<S> {
    params: BTreeMap<String, Parameter<S>>,
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        self.insert_parameter(name, Parameter::new(value))
    }

    pub fn insert_parameter(&mut self, name: impl Into<String>, p: Parameter<S>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        if p.first_moment.shape() != p.value.shape() || p.second_moment.shape() != p.value.shape()
        {
            return Err(Error::ShapeMismatch {
                op: "optimizer state",
                left: p.value.shape().to_vec(),
                right: p.first_moment.shape().to_vec(),
            });
        }
        self.params.insert(name, p);
        Ok(())
    }

    /// Glorot-uniform weight matrix `[fan_in, fan_out]`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| S::of(rng.random_range(-limit..limit)))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .map(|p| p.value.as_ref())
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub(crate) fn shared(&self, name: &str) -> Result<Arc<Tensor<S>>> {
        self.params
            .get(name)
            .map(|p| Arc::clone(&p.value))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.get(name)
    }

    /// Replaces a parameter's value, keeping optimizer state.
    pub fn set(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// True when every value and moment estimate is finite.
    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| {
            [&*p.value, &p.first_moment, &p.second_moment]
                .iter()
                .all(|t| t.data().iter().all(|v| v.is_finite()))
        })
    }

    /// Merges another set into this one; names must not collide.
    pub fn extend(&mut self, other: ParameterSet<S>) -> Result<()> {
        for (name, p) in other.params {
            self.insert_parameter(name, p)?;
        }
        Ok(())
    }

    /// Splits off the parameters whose names start with `prefix`.
    pub fn split_prefix(&self, prefix: &str) -> ParameterSet<S> {
        ParameterSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Adam hyperparameters plus global gradient-norm clipping.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm above which gradients are rescaled; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(100.0),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// What happened during one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    /// Parameters with no gradient supplied; treated as zero.
    pub missing: Vec<String>,
}

/// Global L2 norm over the gradients that belong to `params`.
pub fn global_norm<S: Scalar>(
    params: &ParameterSet<S>,
    grads: &BTreeMap<String, Tensor<S>>,
) -> f64 {
    params
        .names()
        .filter_map(|n| grads.get(n))
        .map(|g| g.sq_norm().to_f64_lossy())
        .sum::<f64>()
        .sqrt()
}

/// Applies one bias-corrected Adam update to every parameter in `params`.
///
/// Gradients for names outside `params` are ignored so a gradient map from a
/// shared tape can be passed to each parameter group in turn.
pub fn adam_step<S: Scalar>(
    params: &mut ParameterSet<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    cfg: &AdamConfig,
) -> Result<StepReport> {
    let mut report = StepReport {
        grad_norm: global_norm(params, grads),
        ..StepReport::default()
    };
    if !report.grad_norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    let mut scale = 1.0;
    if let Some(max) = cfg.clip_norm {
        if report.grad_norm > max {
            scale = max / report.grad_norm;
            report.clipped = true;
        }
    }
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let (one, eps, scale) = (S::one(), S::of(cfg.eps), S::of(scale));

    for (name, p) in params.params.iter_mut() {
        let grad = match grads.get(name) {
            Some(g) if g.shape() != p.value.shape() => {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                })
            }
            Some(g) => Some(g),
            None => {
                report.missing.push(name.clone());
                None
            }
        };
        p.steps += 1;
        let t = p.steps as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = S::of(cfg.lr);
        let value = Arc::make_mut(&mut p.value);
        let n = value.numel();
        let (m, v) = (p.first_moment.data_mut(), p.second_moment.data_mut());
        let w = value.data_mut();
        for i in 0..n {
            let g = grad.map_or(S::zero(), |g| g.data()[i] * scale);
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(report)
}
