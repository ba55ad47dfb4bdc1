//! Differentiable distributions: diagonal Gaussians, Bernoulli likelihoods
//! and entropies.
//!
//! All batched quantities are returned per row as `[rows, 1]` so callers can
//! apply per-sample floors or weights before reducing.

use std::f64::consts::PI;

use crate::autodiff::{Error, Result, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Gaussian with independent coordinates, recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Var,
    pub std: Var,
}

impl DiagonalGaussian {
    pub fn new<S: Scalar>(tape: &Tape<S>, mean: Var, std: Var) -> Result<Self> {
        if tape.shape(mean) != tape.shape(std) {
            return Err(Error::ShapeMismatch {
                op: "gaussian",
                left: tape.shape(mean).to_vec(),
                right: tape.shape(std).to_vec(),
            });
        }
        let data = tape.value(std).data();
        if data.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("gaussian standard deviation".into()));
        }
        if let Some(&bad) = data.iter().find(|&&s| !(s > S::zero())) {
            return Err(Error::InvalidDistribution(format!(
                "standard deviation must be positive, got {bad}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// `std = softplus(raw) + min_std`, which is always positive.
    pub fn from_raw<S: Scalar>(tape: &mut Tape<S>, mean: Var, raw_std: Var, min_std: f64) -> Result<Self> {
        let sp = tape.softplus(raw_std);
        let std = tape.add_scalar(sp, S::of(min_std));
        Self::new(tape, mean, std)
    }

    pub fn detach<S: Scalar>(&self, tape: &mut Tape<S>) -> Self {
        Self {
            mean: tape.stop_gradient(self.mean),
            std: tape.stop_gradient(self.std),
        }
    }

    /// Reparameterized sample `mean + std ⊙ noise`.
    pub fn sample<S: Scalar>(&self, tape: &mut Tape<S>, noise: Var) -> Result<Var> {
        if tape.shape(noise) != tape.shape(self.mean) {
            return Err(Error::ShapeMismatch {
                op: "gaussian sample",
                left: tape.shape(self.mean).to_vec(),
                right: tape.shape(noise).to_vec(),
            });
        }
        let scaled = tape.mul(self.std, noise)?;
        tape.add(self.mean, scaled)
    }

    /// Log density at `x`, summed over coordinates: `[rows, 1]`.
    pub fn log_prob<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let diff = tape.sub(x, self.mean)?;
        let z = tape.div(diff, self.std)?;
        let zz = tape.square(z);
        let half_zz = tape.scale(zz, S::of(-0.5));
        let log_std = tape.log(self.std)?;
        let per_dim = tape.sub(half_zz, log_std)?;
        let per_dim = tape.add_scalar(per_dim, S::of(-0.5 * (2.0 * PI).ln()));
        Ok(tape.sum_cols(per_dim))
    }

    /// Differential entropy `Σ ½ ln(2πe σ²)` per row.
    pub fn entropy<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var> {
        let log_std = tape.log(self.std)?;
        let per_dim = tape.add_scalar(log_std, S::of(0.5 * (2.0 * PI * std::f64::consts::E).ln()));
        Ok(tape.sum_cols(per_dim))
    }
}

/// Sample and its log-probability under `d`.
pub fn gaussian_sample_logprob<S: Scalar>(
    tape: &mut Tape<S>,
    d: &DiagonalGaussian,
    noise: Var,
) -> Result<(Var, Var)> {
    let sample = d.sample(tape, noise)?;
    let lp = d.log_prob(tape, sample)?;
    Ok((sample, lp))
}

/// `KL(p ‖ q)` per row, summed over coordinates.
pub fn kl_per_row<S: Scalar>(tape: &mut Tape<S>, p: &DiagonalGaussian, q: &DiagonalGaussian) -> Result<Var> {
    if tape.shape(p.mean) != tape.shape(q.mean) {
        return Err(Error::ShapeMismatch {
            op: "kl",
            left: tape.shape(p.mean).to_vec(),
            right: tape.shape(q.mean).to_vec(),
        });
    }
    for d in [p, q] {
        if tape.value(d.std).data().iter().any(|&s| !(s > S::zero())) {
            return Err(Error::InvalidDistribution(
                "standard deviation must be positive".into(),
            ));
        }
    }
    let log_q = tape.log(q.std)?;
    let log_p = tape.log(p.std)?;
    let log_ratio = tape.sub(log_q, log_p)?;
    let var_p = tape.square(p.std);
    let dmean = tape.sub(p.mean, q.mean)?;
    let dmean_sq = tape.square(dmean);
    let numer = tape.add(var_p, dmean_sq)?;
    let var_q = tape.square(q.std);
    let denom = tape.scale(var_q, S::of(2.0));
    let ratio = tape.div(numer, denom)?;
    let per_dim = tape.add(log_ratio, ratio)?;
    let per_dim = tape.add_scalar(per_dim, S::of(-0.5));
    Ok(tape.sum_cols(per_dim))
}

/// `KL(p ‖ q)` summed over every coordinate and row.
pub fn kl_diag_gaussian<S: Scalar>(
    tape: &mut Tape<S>,
    p: &DiagonalGaussian,
    q: &DiagonalGaussian,
) -> Result<Var> {
    let rows = kl_per_row(tape, p, q)?;
    Ok(tape.sum(rows))
}

/// Log-likelihood of `x` under a unit-variance Gaussian centred at `mean`.
pub fn unit_gaussian_log_prob<S: Scalar>(tape: &mut Tape<S>, mean: Var, x: Var) -> Result<Var> {
    let diff = tape.sub(x, mean)?;
    let sq = tape.square(diff);
    let per_dim = tape.affine(sq, S::of(-0.5), S::of(-0.5 * (2.0 * PI).ln()));
    Ok(tape.sum_cols(per_dim))
}

/// Bernoulli log-likelihood of binary `targets` given `logits`:
/// `y·l − softplus(l)`, per row.
pub fn bernoulli_log_prob<S: Scalar>(tape: &mut Tape<S>, logits: Var, targets: Var) -> Result<Var> {
    let yl = tape.mul(logits, targets)?;
    let sp = tape.softplus(logits);
    let per_dim = tape.sub(yl, sp)?;
    Ok(tape.sum_cols(per_dim))
}

/// Shannon entropy (nats) of a categorical distribution given by `probs`.
pub fn categorical_entropy<S: Scalar>(probs: &Tensor<S>) -> Result<S> {
    let total: S = probs.sum();
    if probs.data().iter().any(|&p| p < S::zero() || !p.is_finite())
        || (total - S::one()).abs() > S::of(1e-9)
    {
        return Err(Error::InvalidDistribution(format!(
            "categorical probabilities must be non-negative and sum to 1 (sum {total})"
        )));
    }
    Ok(-probs
        .data()
        .iter()
        .filter(|&&p| p > S::zero())
        .map(|&p| p * p.ln())
        .sum::<S>())
}
