use serde::{Deserialize, Serialize};

use crate::autodiff::{bernoulli_log_prob, kl_per_row, unit_gaussian_log_prob, Tape, Tensor, Var};
use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};
use crate::nn::Load;
use crate::scalar::Scalar;
use crate::world_model::{LatentState, WorldModel};

/// Coefficients of the world-model objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// KL with the posterior held fixed; trains the prior.
    pub kl_prior: f64,
    /// KL with the prior held fixed; regularizes the posterior.
    pub kl_posterior: f64,
    pub observation: f64,
    pub reward: f64,
    pub cost: f64,
    pub continuation: f64,
    /// Policy entropy bonus; consumed by the actor objective.
    pub entropy: f64,
    /// Per-step lower bound applied to each KL term.
    pub free_nats: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            kl_prior: 0.8,
            kl_posterior: 0.2,
            observation: 1.0,
            reward: 1.0,
            cost: 1.0,
            continuation: 1.0,
            entropy: 1e-3,
            free_nats: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kl_prior,
            self.kl_posterior,
            self.observation,
            self.reward,
            self.cost,
            self.continuation,
            self.entropy,
            self.free_nats,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `T` time-major steps of `B` parallel sequences. Entry `t` holds the
/// observation at step `t`, the action that led to it (zero at an episode
/// start) and the reward, cost and continuation flag received on arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<S> {
    pub observations: Vec<Tensor<S>>,
    pub actions: Vec<Tensor<S>>,
    pub rewards: Vec<Tensor<S>>,
    pub costs: Vec<Tensor<S>>,
    pub continues: Vec<Tensor<S>>,
}

impl<S: Scalar> SequenceBatch<S> {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.observations.first().map_or(0, Tensor::rows)
    }
}

/// Per-term values of the objective, each summed over time and averaged
/// over the batch. KL values are after the free-nats floor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub kl_prior: f64,
    pub kl_posterior: f64,
    /// Mean KL per step before flooring.
    pub kl_raw: f64,
    pub observation_nll: f64,
    pub reward_nll: f64,
    pub cost_nll: f64,
    pub continuation_nll: f64,
    pub total: f64,
}

pub struct WorldModelLoss {
    pub loss: Var,
    pub terms: LossTerms,
    /// Posterior states for every step, time-major.
    pub posteriors: Vec<LatentState>,
}

/// Runs the posterior filter over `batch` and returns the states, time-major.
pub fn observe<S: Scalar>(
    tape: &mut Tape<S>,
    wm: &WorldModel,
    params: &ParameterSet<S>,
    mode: Load,
    batch: &SequenceBatch<S>,
    noise: &[Tensor<S>],
) -> Result<Vec<LatentState>> {
    if noise.len() != batch.len() {
        return Err(Error::Dimension {
            what: "noise steps",
            expected: batch.len(),
            got: noise.len(),
        });
    }
    let b = batch.batch_size();
    let mut state = wm.initial_state(tape, b)?;
    let mut out = Vec::with_capacity(batch.len());
    for t in 0..batch.len() {
        let obs = tape.constant(batch.observations[t].clone());
        let act = tape.constant(batch.actions[t].clone());
        let n = tape.constant(noise[t].clone());
        state = wm.posterior_step(tape, params, mode, &state, act, obs, n)?;
        out.push(state);
    }
    Ok(out)
}

fn stack<S: Scalar>(tape: &mut Tape<S>, parts: &[Tensor<S>]) -> Result<Var> {
    let vars: Vec<Var> = parts.iter().map(|p| tape.constant(p.clone())).collect();
    Ok(tape.concat_rows(&vars)?)
}

/// Balanced-KL latent objective with observation, reward, cost and
/// continuation likelihoods:
///
/// ```text
/// γ₁·max(KL(sg(post) ‖ prior), f) + γ₂·max(KL(post ‖ sg(prior)), f)
///   − λ₁ log p(o) − λ₂ log p(r) − λ₃ log p(c) − λ_cont log p(cont)
/// ```
///
/// summed over time and averaged over the batch.
pub fn world_model_loss<S: Scalar>(
    tape: &mut Tape<S>,
    wm: &WorldModel,
    params: &ParameterSet<S>,
    batch: &SequenceBatch<S>,
    noise: &[Tensor<S>],
    weights: &LossWeights,
) -> Result<WorldModelLoss> {
    let mode = Load::Train;
    let posteriors = observe(tape, wm, params, mode, batch, noise)?;
    let b = batch.batch_size();
    let inv_b = S::of(1.0 / b as f64);
    let free = S::of(weights.free_nats);

    let mut kl_prior_rows = Vec::with_capacity(posteriors.len());
    let mut kl_post_rows = Vec::with_capacity(posteriors.len());
    let mut kl_raw_rows = Vec::with_capacity(posteriors.len());
    let mut feats = Vec::with_capacity(posteriors.len());
    for post in &posteriors {
        let prior = wm.prior_dist(tape, params, mode, post.h)?;
        let post_sg = post.dist.detach(tape);
        let prior_sg = prior.detach(tape);
        let lhs = kl_per_row(tape, &post_sg, &prior)?;
        let rhs = kl_per_row(tape, &post.dist, &prior_sg)?;
        kl_raw_rows.push(lhs);
        kl_prior_rows.push(tape.floor_at(lhs, free));
        kl_post_rows.push(tape.floor_at(rhs, free));
        feats.push(wm.features(tape, post)?);
    }
    let kl_prior = tape.concat_rows(&kl_prior_rows)?;
    let kl_prior = tape.sum(kl_prior);
    let kl_post = tape.concat_rows(&kl_post_rows)?;
    let kl_post = tape.sum(kl_post);

    let feat = tape.concat_rows(&feats)?;
    let obs = stack(tape, &batch.observations)?;
    let rew = stack(tape, &batch.rewards)?;
    let cost = stack(tape, &batch.costs)?;
    let cont = stack(tape, &batch.continues)?;

    let obs_mean = wm.decode_features(tape, params, mode, feat)?;
    let obs_lp = unit_gaussian_log_prob(tape, obs_mean, obs)?;
    let obs_lp = tape.sum(obs_lp);
    let rew_mean = wm.reward_features(tape, params, mode, feat)?;
    let rew_lp = unit_gaussian_log_prob(tape, rew_mean, rew)?;
    let rew_lp = tape.sum(rew_lp);
    let cost_logit = wm.cost_logit_features(tape, params, mode, feat)?;
    let cost_lp = bernoulli_log_prob(tape, cost_logit, cost)?;
    let cost_lp = tape.sum(cost_lp);
    let cont_logit = wm.cont_logit_features(tape, params, mode, feat)?;
    let cont_lp = bernoulli_log_prob(tape, cont_logit, cont)?;
    let cont_lp = tape.sum(cont_lp);

    let parts = [
        (kl_prior, weights.kl_prior),
        (kl_post, weights.kl_posterior),
        (obs_lp, -weights.observation),
        (rew_lp, -weights.reward),
        (cost_lp, -weights.cost),
        (cont_lp, -weights.continuation),
    ];
    let mut total = tape.scale(parts[0].0, S::of(parts[0].1));
    for &(v, w) in &parts[1..] {
        let scaled = tape.scale(v, S::of(w));
        total = tape.add(total, scaled)?;
    }
    let loss = tape.scale(total, inv_b);

    let per_batch = |tape: &Tape<S>, v: Var| tape.value(v).item().to_f64_lossy() / b as f64;
    let raw_total: f64 = kl_raw_rows.iter().map(|&v| tape.value(v).sum().to_f64_lossy()).sum();
    let terms = LossTerms {
        kl_prior: per_batch(tape, kl_prior),
        kl_posterior: per_batch(tape, kl_post),
        kl_raw: raw_total / (b * batch.len()) as f64,
        observation_nll: -per_batch(tape, obs_lp),
        reward_nll: -per_batch(tape, rew_lp),
        cost_nll: -per_batch(tape, cost_lp),
        continuation_nll: -per_batch(tape, cont_lp),
        total: tape.value(loss).item().to_f64_lossy(),
    };
    for (name, v) in [
        ("kl_prior", terms.kl_prior),
        ("kl_posterior", terms.kl_posterior),
        ("observation_nll", terms.observation_nll),
        ("reward_nll", terms.reward_nll),
        ("cost_nll", terms.cost_nll),
        ("continuation_nll", terms.continuation_nll),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    Ok(WorldModelLoss {
        loss,
        terms,
        posteriors,
    })
}

/// Mean squared error of one-step observation predictions: filter with the
/// posterior up to step `t`, take one prior step with the next action, and
/// decode. Latents use their means (zero noise).
pub fn one_step_prediction_mse<S: Scalar>(
    wm: &WorldModel,
    params: &ParameterSet<S>,
    batch: &SequenceBatch<S>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let zeros: Vec<Tensor<S>> = (0..batch.len())
        .map(|_| Tensor::zeros(&[batch.batch_size(), wm.config.stoch]))
        .collect();
    let posts = observe(&mut tape, wm, params, Load::Frozen, batch, &zeros)?;
    let noise = tape.constant(zeros[0].clone());
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..batch.len().saturating_sub(1) {
        let act = tape.constant(batch.actions[t + 1].clone());
        let next = wm.prior_step(&mut tape, params, Load::Frozen, &posts[t], act, noise)?;
        let pred = wm.decode(&mut tape, params, Load::Frozen, &next)?;
        let target = &batch.observations[t + 1];
        for (&p, &y) in tape.value(pred.mean).data().iter().zip(target.data()) {
            let d = (p - y).to_f64_lossy();
            total += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("sequences of length >= 2"));
    }
    Ok(total / count as f64)
}
