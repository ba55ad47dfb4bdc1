use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Load;
use crate::scalar::Scalar;
use crate::world_model::{LatentState, WorldModel};

/// An action chosen from latent features, with the entropy of the
/// distribution it was drawn from (`[rows, 1]`).
#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    pub action: Var,
    pub entropy: Var,
}

/// Anything that can pick actions from latent features on a tape.
pub trait LatentPolicy<S: Scalar> {
    fn action_dim(&self) -> usize;

    fn sample(&self, tape: &mut Tape<S>, features: Var, noise: Var) -> Result<PolicySample>;
}

/// Standard-normal noise for one imagination rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagineNoise<S> {
    pub latent: Vec<Tensor<S>>,
    pub action: Vec<Tensor<S>>,
}

impl<S: Scalar> ImagineNoise<S> {
    pub fn sample(rng: &mut impl Rng, rows: usize, stoch: usize, action_dim: usize, horizon: usize) -> Self {
        let mut draw = |cols: usize| {
            let data = (0..rows * cols)
                .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("positive dims")
        };
        let mut latent = Vec::with_capacity(horizon);
        let mut action = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            action.push(draw(action_dim));
            latent.push(draw(stoch));
        }
        Self { latent, action }
    }

    pub fn zeros(rows: usize, stoch: usize, action_dim: usize, horizon: usize) -> Self {
        Self {
            latent: vec![Tensor::zeros(&[rows, stoch]); horizon],
            action: vec![Tensor::zeros(&[rows, action_dim]); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.latent.len()
    }
}

/// A rollout inside the world model.
///
/// `states` and `features` hold `s₀ … s_H`; the per-step vectors have `H`
/// entries, where step `k` is the action taken in `s_k` and the reward,
/// cost probability and continuation probability predicted for `s_{k+1}`.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory {
    pub states: Vec<LatentState>,
    pub features: Vec<Var>,
    pub actions: Vec<Var>,
    pub entropies: Vec<Var>,
    pub rewards: Vec<Var>,
    pub costs: Vec<Var>,
    pub continues: Vec<Var>,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Rolls `policy` forward for `noise.horizon()` prior steps from `start`.
///
/// World-model parameters are loaded as constants and the start states are
/// detached, so gradients from any function of the trajectory reach only
/// the policy's parameters.
pub fn imagine<S: Scalar>(
    tape: &mut Tape<S>,
    wm: &WorldModel,
    wm_params: &ParameterSet<S>,
    policy: &impl LatentPolicy<S>,
    start: &LatentState,
    noise: &ImagineNoise<S>,
) -> Result<ImaginedTrajectory> {
    let horizon = noise.horizon();
    if horizon == 0 {
        return Err(Error::Config("imagination horizon must be at least 1".into()));
    }
    if policy.action_dim() != wm.config.action_dim {
        return Err(Error::Dimension {
            what: "policy action",
            expected: wm.config.action_dim,
            got: policy.action_dim(),
        });
    }
    let mode = Load::Frozen;
    let mut state = start.detach(tape);
    let mut feat = wm.features(tape, &state)?;
    let mut traj = ImaginedTrajectory {
        states: vec![state],
        features: vec![feat],
        actions: Vec::with_capacity(horizon),
        entropies: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        continues: Vec::with_capacity(horizon),
    };
    for k in 0..horizon {
        let action_noise = tape.constant(noise.action[k].clone());
        let sample = policy.sample(tape, feat, action_noise)?;
        let latent_noise = tape.constant(noise.latent[k].clone());
        state = wm.prior_step(tape, wm_params, mode, &state, sample.action, latent_noise)?;
        feat = wm.features(tape, &state)?;
        let reward = wm.reward_features(tape, wm_params, mode, feat)?;
        let cost_logit = wm.cost_logit_features(tape, wm_params, mode, feat)?;
        let cont_logit = wm.cont_logit_features(tape, wm_params, mode, feat)?;
        traj.actions.push(sample.action);
        traj.entropies.push(sample.entropy);
        traj.rewards.push(reward);
        traj.costs.push(tape.sigmoid(cost_logit));
        traj.continues.push(tape.sigmoid(cont_logit));
        traj.states.push(state);
        traj.features.push(feat);
    }
    Ok(traj)
}
