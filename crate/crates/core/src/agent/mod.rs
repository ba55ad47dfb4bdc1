//! Actor-critic trained on imagined rollouts, with a cost critic and a
//! Lagrange multiplier for the expected-cost constraint.

pub mod tabular;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, DiagonalGaussian, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Load, Mlp};
use crate::scalar::Scalar;
use crate::world_model::{
    check_layout, imagine, ImagineNoise, ImaginedTrajectory, LatentPolicy, LatentSnapshot, PolicySample, WorldModel,
};

pub use tabular::{solve_tabular_cmdp, CmdpSolution, SolveMethod, TabularCmdp, TabularPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: usize,
    /// Imagination horizon `H`.
    pub horizon: usize,
    pub gamma: f64,
    /// TD(λ) mixing parameter for return targets.
    pub lambda_ret: f64,
    /// Entropy bonus coefficient `η`.
    pub entropy: f64,
    /// Lower bound on the pre-squash action standard deviation.
    pub min_std: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            horizon: 15,
            gamma: 0.99,
            lambda_ret: 0.95,
            entropy: 1e-3,
            min_std: 0.1,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.horizon == 0 {
            return Err(Error::Config("agent hidden size and horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda_ret) {
            return Err(Error::Config("gamma and lambda_ret must lie in [0, 1]".into()));
        }
        let positive = [self.min_std, self.actor_lr, self.critic_lr];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.entropy >= 0.0) {
            return Err(Error::Config("agent rates and min_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    /// Reparameterized sample squashed by tanh.
    Explore,
    /// `tanh(mean)`.
    Greedy,
}

/// Policy network producing a tanh-squashed diagonal Gaussian over actions.
/// Parameters are named `actor.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    net: Mlp,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub min_std: f64,
}

impl Actor {
    pub fn new<S: Scalar>(
        feature_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        rng: &mut impl Rng,
    ) -> Result<(Self, ParameterSet<S>)> {
        let mut params = ParameterSet::new();
        let h = config.hidden;
        let net = Mlp::init(&mut params, "actor", &[feature_dim, h, h, 2 * action_dim], rng)?;
        let actor = Self {
            net,
            feature_dim,
            action_dim,
            min_std: config.min_std,
        };
        Ok((actor, params))
    }

    pub fn for_params<S: Scalar>(
        feature_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        params: &ParameterSet<S>,
    ) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (actor, scratch) = Self::new::<S>(feature_dim, action_dim, config, &mut rng)?;
        check_layout(&scratch, params)?;
        Ok(actor)
    }

    /// Pre-squash Gaussian for `features`.
    pub fn dist<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        features: Var,
    ) -> Result<DiagonalGaussian> {
        let out = self.net.forward(tape, params, mode, features)?;
        let mean = tape.slice_cols(out, 0, self.action_dim)?;
        let raw = tape.slice_cols(out, self.action_dim, 2 * self.action_dim)?;
        Ok(DiagonalGaussian::from_raw(tape, mean, raw, self.min_std)?)
    }

    pub fn sample<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        features: Var,
        noise: Var,
    ) -> Result<PolicySample> {
        let dist = self.dist(tape, params, mode, features)?;
        let pre = dist.sample(tape, noise)?;
        Ok(PolicySample {
            action: tape.tanh(pre),
            entropy: dist.entropy(tape)?,
        })
    }

    /// Chooses actions for environment interaction. `noise` is ignored in
    /// greedy mode.
    pub fn act<S: Scalar>(
        &self,
        params: &ParameterSet<S>,
        state: &LatentSnapshot<S>,
        mode: ActMode,
        noise: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let feat = tape.constant(state.features());
        if tape.value(feat).cols() != self.feature_dim {
            return Err(Error::Dimension {
                what: "actor features",
                expected: self.feature_dim,
                got: tape.value(feat).cols(),
            });
        }
        let dist = self.dist(&mut tape, params, Load::Frozen, feat)?;
        let pre = match mode {
            ActMode::Greedy => dist.mean,
            ActMode::Explore => {
                let n = tape.constant(noise.clone());
                dist.sample(&mut tape, n)?
            }
        };
        let action = tape.tanh(pre);
        Ok(tape.value(action).clone())
    }

    pub fn bind<'a, S: Scalar>(&'a self, params: &'a ParameterSet<S>) -> BoundActor<'a, S> {
        BoundActor { actor: self, params }
    }
}

/// An actor paired with its parameters, loaded as trainable.
pub struct BoundActor<'a, S> {
    actor: &'a Actor,
    params: &'a ParameterSet<S>,
}

impl<S: Scalar> LatentPolicy<S> for BoundActor<'_, S> {
    fn action_dim(&self) -> usize {
        self.actor.action_dim
    }

    fn sample(&self, tape: &mut Tape<S>, features: Var, noise: Var) -> Result<PolicySample> {
        self.actor.sample(tape, self.params, Load::Train, features, noise)
    }
}

/// Reward value `V` and cost value `V_c`, parameters named `critic.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    value: Mlp,
    cost: Mlp,
    pub feature_dim: usize,
}

impl Critic {
    pub fn new<S: Scalar>(
        feature_dim: usize,
        config: &AgentConfig,
        rng: &mut impl Rng,
    ) -> Result<(Self, ParameterSet<S>)> {
        let mut params = ParameterSet::new();
        let h = config.hidden;
        let value = Mlp::init(&mut params, "critic.v", &[feature_dim, h, h, 1], rng)?;
        let cost = Mlp::init(&mut params, "critic.c", &[feature_dim, h, h, 1], rng)?;
        Ok((
            Self {
                value,
                cost,
                feature_dim,
            },
            params,
        ))
    }

    pub fn for_params<S: Scalar>(feature_dim: usize, config: &AgentConfig, params: &ParameterSet<S>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (critic, scratch) = Self::new::<S>(feature_dim, config, &mut rng)?;
        check_layout(&scratch, params)?;
        Ok(critic)
    }

    pub fn value<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, feat: Var) -> Result<Var> {
        Ok(self.value.forward(tape, params, mode, feat)?)
    }

    pub fn cost_value<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        feat: Var,
    ) -> Result<Var> {
        Ok(self.cost.forward(tape, params, mode, feat)?)
    }
}

/// TD(λ) targets, computed backwards from `R_H = V(s_H)`:
///
/// ```text
/// R_k = r_k + γ·cont_k·[(1 − λ)·V(s_{k+1}) + λ·R_{k+1}]
/// ```
///
/// `rewards` and `continues` have `H` entries, `values` has `H + 1`.
pub fn lambda_returns<S: Scalar>(
    tape: &mut Tape<S>,
    rewards: &[Var],
    continues: &[Var],
    values: &[Var],
    gamma: f64,
    lambda_ret: f64,
) -> Result<Vec<Var>> {
    let h = rewards.len();
    if h == 0 || continues.len() != h || values.len() != h + 1 {
        return Err(Error::Dimension {
            what: "lambda-return values",
            expected: h + 1,
            got: values.len(),
        });
    }
    let mut out = vec![values[h]; h];
    let mut next = values[h];
    for k in (0..h).rev() {
        let boot = tape.scale(values[k + 1], S::of(1.0 - lambda_ret));
        let tail = tape.scale(next, S::of(lambda_ret));
        let blend = tape.add(boot, tail)?;
        let carried = tape.mul(continues[k], blend)?;
        let carried = tape.scale(carried, S::of(gamma));
        next = tape.add(rewards[k], carried)?;
        out[k] = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorTerms {
    /// Mean advantage `R_k − V(s_k)`.
    pub advantage: f64,
    pub cost_return: f64,
    pub entropy: f64,
    pub total: f64,
}

fn stacked_mean<S: Scalar>(tape: &mut Tape<S>, parts: &[Var]) -> Result<Var> {
    let all = tape.concat_rows(parts)?;
    Ok(tape.mean(all))
}

/// `(−mean(R_k − V(s_k)) + λ_L·mean(C_k)) / (1 + λ_L) − η·mean(H[π(·|s_k)])`.
///
/// `baselines` are plain values, so they act as constants; the gradient
/// reaches the actor through the reparameterized returns and entropies.
pub fn actor_loss<S: Scalar>(
    tape: &mut Tape<S>,
    traj: &ImaginedTrajectory,
    returns: &[Var],
    cost_returns: &[Var],
    baselines: &[Tensor<S>],
    entropy_coef: f64,
    multiplier: f64,
) -> Result<(Var, ActorTerms)> {
    let h = traj.horizon();
    if returns.len() != h || cost_returns.len() != h || baselines.len() != h {
        return Err(Error::Dimension {
            what: "actor loss steps",
            expected: h,
            got: returns.len().min(cost_returns.len()).min(baselines.len()),
        });
    }
    let mut adv = Vec::with_capacity(h);
    for k in 0..h {
        let b = tape.constant(baselines[k].clone());
        adv.push(tape.sub(returns[k], b)?);
    }
    let adv = stacked_mean(tape, &adv)?;
    let cost = stacked_mean(tape, cost_returns)?;
    let ent = stacked_mean(tape, &traj.entropies)?;

    let loss = tape.neg(adv);
    let penalty = tape.scale(cost, S::of(multiplier));
    let loss = tape.add(loss, penalty)?;
    // Dividing by 1 + λ_L keeps the step size bounded as the multiplier
    // grows; at λ_L = 0 the objective is untouched.
    let loss = if multiplier == 0.0 {
        loss
    } else {
        tape.scale(loss, S::of(1.0 / (1.0 + multiplier)))
    };
    let bonus = tape.scale(ent, S::of(entropy_coef));
    let loss = tape.sub(loss, bonus)?;

    let read = |v: Var| tape.value(v).item().to_f64_lossy();
    let terms = ActorTerms {
        advantage: read(adv),
        cost_return: read(cost),
        entropy: read(ent),
        total: read(loss),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite { term: "actor loss".into() });
    }
    Ok((loss, terms))
}

/// `mean((V(s_k) − R_k)²) + mean((V_c(s_k) − C_k)²)` with the features
/// detached and targets given as plain values.
pub fn critic_loss<S: Scalar>(
    tape: &mut Tape<S>,
    critic: &Critic,
    params: &ParameterSet<S>,
    features: &[Var],
    returns: &[Tensor<S>],
    cost_returns: &[Tensor<S>],
) -> Result<Var> {
    if features.len() != returns.len() || features.len() != cost_returns.len() || features.is_empty() {
        return Err(Error::Dimension {
            what: "critic loss steps",
            expected: features.len(),
            got: returns.len().min(cost_returns.len()),
        });
    }
    let feat = tape.concat_rows(features)?;
    let feat = tape.stop_gradient(feat);
    let mse = |tape: &mut Tape<S>, pred: Var, targets: &[Tensor<S>]| -> Result<Var> {
        let target = tape.constant(Tensor::stack_rows(targets)?);
        let diff = tape.sub(pred, target)?;
        let sq = tape.square(diff);
        Ok(tape.mean(sq))
    };
    let v = critic.value(tape, params, Load::Train, feat)?;
    let v_loss = mse(tape, v, returns)?;
    let c = critic.cost_value(tape, params, Load::Train, feat)?;
    let c_loss = mse(tape, c, cost_returns)?;
    let loss = tape.add(v_loss, c_loss)?;
    if !tape.value(loss).item().to_f64_lossy().is_finite() {
        return Err(Error::NonFinite { term: "critic loss".into() });
    }
    Ok(loss)
}

/// Expected-cost budget `d` with its Lagrange multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyBudget {
    /// Allowed expected discounted cost per episode.
    pub limit: f64,
    /// `λ_L`, always non-negative.
    pub multiplier: f64,
    pub lr: f64,
}

impl Default for SafetyBudget {
    fn default() -> Self {
        Self {
            limit: 0.1,
            multiplier: 0.0,
            lr: 0.05,
        }
    }
}

impl SafetyBudget {
    pub fn new(limit: f64, lr: f64) -> Result<Self> {
        if !(limit.is_finite() && limit >= 0.0 && lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("invalid budget {limit} / learning rate {lr}")));
        }
        Ok(Self {
            limit,
            multiplier: 0.0,
            lr,
        })
    }
}

/// Projected dual ascent: `λ_L ← max(0, λ_L + lr·(cost − d))`.
pub fn update_multiplier(observed_cost_return: f64, budget: &SafetyBudget) -> SafetyBudget {
    let step = budget.multiplier + budget.lr * (observed_cost_return - budget.limit);
    SafetyBudget {
        multiplier: step.max(0.0),
        ..budget.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub mean_cost: f64,
    /// `d − mean cost`; non-negative exactly when feasible.
    pub margin: f64,
}

/// Feasibility of a policy from its per-episode discounted costs. The
/// boundary `mean = d` counts as feasible.
pub fn is_feasible(episode_costs: &[f64], budget: &SafetyBudget) -> Result<Feasibility> {
    if episode_costs.is_empty() {
        return Err(Error::Empty("evaluation episodes"));
    }
    let mean_cost = episode_costs.iter().sum::<f64>() / episode_costs.len() as f64;
    Ok(Feasibility {
        feasible: mean_cost <= budget.limit,
        mean_cost,
        margin: budget.limit - mean_cost,
    })
}

/// `Σ_t γ^t c_t`.
pub fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    values.iter().rev().fold(0.0, |acc, &c| c + gamma * acc)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub actor: ActorTerms,
    pub critic_loss: f64,
    /// Mean predicted per-step cost probability over the rollout.
    pub imagined_cost: f64,
    pub value_mean: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// Actor, critic and their hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub config: AgentConfig,
    pub actor: Actor,
    pub critic: Critic,
}

impl ActorCritic {
    pub fn new<S: Scalar>(
        feature_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        rng: &mut impl Rng,
    ) -> Result<(Self, ParameterSet<S>, ParameterSet<S>)> {
        config.validate()?;
        let (actor, actor_params) = Actor::new(feature_dim, action_dim, &config, rng)?;
        let (critic, critic_params) = Critic::new(feature_dim, &config, rng)?;
        Ok((Self { config, actor, critic }, actor_params, critic_params))
    }

    pub fn for_params<S: Scalar>(
        feature_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        actor_params: &ParameterSet<S>,
        critic_params: &ParameterSet<S>,
    ) -> Result<Self> {
        config.validate()?;
        let actor = Actor::for_params(feature_dim, action_dim, &config, actor_params)?;
        let critic = Critic::for_params(feature_dim, &config, critic_params)?;
        Ok(Self { config, actor, critic })
    }

    /// Imagines from `start` and builds both losses on `tape`.
    ///
    /// Baselines and critic targets are read off the rollout unless `pinned`
    /// supplies them; pinning makes each loss an ordinary differentiable
    /// function of its own parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn imagined_losses<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        wm: &WorldModel,
        wm_params: &ParameterSet<S>,
        actor_params: &ParameterSet<S>,
        critic_params: &ParameterSet<S>,
        start: &LatentSnapshot<S>,
        noise: &ImagineNoise<S>,
        multiplier: f64,
        pinned: Option<&PinnedTargets<S>>,
    ) -> Result<ImaginedLosses<S>> {
        let cfg = &self.config;
        let rows = start.rows();
        let s0 = start.load(tape)?;
        let traj = imagine(tape, wm, wm_params, &self.actor.bind(actor_params), &s0, noise)?;

        let h = traj.horizon();
        let all = tape.concat_rows(&traj.features)?;
        let v_all = self.critic.value(tape, critic_params, Load::Frozen, all)?;
        let c_all = self.critic.cost_value(tape, critic_params, Load::Frozen, all)?;
        let mut values = Vec::with_capacity(h + 1);
        let mut cost_values = Vec::with_capacity(h + 1);
        for k in 0..=h {
            values.push(tape.slice_rows(v_all, k * rows, (k + 1) * rows)?);
            cost_values.push(tape.slice_rows(c_all, k * rows, (k + 1) * rows)?);
        }
        let returns = lambda_returns(tape, &traj.rewards, &traj.continues, &values, cfg.gamma, cfg.lambda_ret)?;
        let cost_returns = lambda_returns(tape, &traj.costs, &traj.continues, &cost_values, cfg.gamma, cfg.lambda_ret)?;

        let read = |tape: &Tape<S>, vars: &[Var]| -> Vec<Tensor<S>> { vars.iter().map(|&v| tape.value(v).clone()).collect() };
        let targets = match pinned {
            Some(p) => p.clone(),
            None => PinnedTargets {
                baselines: read(tape, &values[..h]),
                returns: read(tape, &returns),
                cost_returns: read(tape, &cost_returns),
            },
        };
        let (actor, actor_terms) = actor_loss(
            tape,
            &traj,
            &returns,
            &cost_returns,
            &targets.baselines,
            cfg.entropy,
            multiplier,
        )?;
        let critic = critic_loss(
            tape,
            &self.critic,
            critic_params,
            &traj.features[..h],
            &targets.returns,
            &targets.cost_returns,
        )?;
        let mean_of = |vars: &[Var]| {
            vars.iter().map(|&v| tape.value(v).mean().to_f64_lossy()).sum::<f64>() / vars.len() as f64
        };
        let imagined_cost = mean_of(&traj.costs);
        let value_mean = mean_of(&values[..h]);
        Ok(ImaginedLosses {
            actor,
            critic,
            actor_terms,
            imagined_cost,
            value_mean,
            targets,
        })
    }

    /// One actor and one critic step on rollouts imagined from `start`.
    /// World-model parameters are only read.
    #[allow(clippy::too_many_arguments)]
    pub fn update<S: Scalar>(
        &self,
        wm: &WorldModel,
        wm_params: &ParameterSet<S>,
        actor_params: &mut ParameterSet<S>,
        critic_params: &mut ParameterSet<S>,
        start: &LatentSnapshot<S>,
        multiplier: f64,
        rng: &mut impl Rng,
    ) -> Result<UpdateReport> {
        let cfg = &self.config;
        let noise = ImagineNoise::sample(rng, start.rows(), wm.config.stoch, self.actor.action_dim, cfg.horizon);
        let mut tape = Tape::new();
        let losses = self.imagined_losses(
            &mut tape,
            wm,
            wm_params,
            actor_params,
            critic_params,
            start,
            &noise,
            multiplier,
            None,
        )?;
        let total = tape.add(losses.actor, losses.critic)?;
        let grads = tape.backward(total)?.params();
        let actor_step = adam_step(actor_params, &grads, &AdamConfig::with_lr(cfg.actor_lr))?;
        let critic_step = adam_step(critic_params, &grads, &AdamConfig::with_lr(cfg.critic_lr))?;
        Ok(UpdateReport {
            critic_loss: tape.value(losses.critic).item().to_f64_lossy(),
            imagined_cost: losses.imagined_cost,
            value_mean: losses.value_mean,
            actor: losses.actor_terms,
            actor_grad_norm: actor_step.grad_norm,
            critic_grad_norm: critic_step.grad_norm,
        })
    }
}

/// Baselines `V(s_k)` and return targets held as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnedTargets<S> {
    pub baselines: Vec<Tensor<S>>,
    pub returns: Vec<Tensor<S>>,
    pub cost_returns: Vec<Tensor<S>>,
}

pub struct ImaginedLosses<S> {
    pub actor: Var,
    pub critic: Var,
    pub actor_terms: ActorTerms,
    pub imagined_cost: f64,
    pub value_mean: f64,
    pub targets: PinnedTargets<S>,
}
