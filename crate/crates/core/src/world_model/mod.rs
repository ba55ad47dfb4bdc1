//! Recurrent state-space world model.
//!
//! The latent state has a deterministic part `h`, carried by a GRU over
//! previous latents and actions, and a stochastic part `z` drawn from a
//! diagonal Gaussian. Two heads produce that Gaussian: the posterior sees
//! the encoded observation, the prior sees only `h` and is what imagination
//! rolls forward. Decoder, reward, cost and continuation heads read the
//! concatenated feature `[h, z]`.

mod imagine;
mod loss;

pub use imagine::{imagine, ImagineNoise, ImaginedTrajectory, LatentPolicy, PolicySample};
pub use loss::{
    observe, one_step_prediction_mse, world_model_loss, LossTerms, LossWeights, SequenceBatch,
    WorldModelLoss,
};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiagonalGaussian, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{GruCell, Linear, Load, Mlp};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Size of the deterministic recurrent state `h`.
    pub deter: usize,
    /// Size of the stochastic latent `z`.
    pub stoch: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    /// Lower bound added to softplus standard deviations.
    pub min_std: f64,
}

impl WorldModelConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            deter: 64,
            stoch: 16,
            hidden: 64,
            min_std: 1e-4,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.deter + self.stoch
    }
}

/// Latent state recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentState {
    pub h: Var,
    pub z: Var,
    pub dist: DiagonalGaussian,
}

impl LatentState {
    pub fn detach<S: Scalar>(&self, tape: &mut Tape<S>) -> Self {
        Self {
            h: tape.stop_gradient(self.h),
            z: tape.stop_gradient(self.z),
            dist: self.dist.detach(tape),
        }
    }

    pub fn snapshot<S: Scalar>(&self, tape: &Tape<S>) -> LatentSnapshot<S> {
        LatentSnapshot {
            h: tape.value(self.h).clone(),
            z: tape.value(self.z).clone(),
            mean: tape.value(self.dist.mean).clone(),
            std: tape.value(self.dist.std).clone(),
        }
    }

    pub fn rows<S: Scalar>(&self, tape: &Tape<S>) -> usize {
        tape.value(self.h).rows()
    }
}

/// Tape-free copy of a latent state, used to carry the filter between
/// environment steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSnapshot<S> {
    pub h: Tensor<S>,
    pub z: Tensor<S>,
    pub mean: Tensor<S>,
    pub std: Tensor<S>,
}

impl<S: Scalar> LatentSnapshot<S> {
    /// Concatenates the rows of several snapshots.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let col = |f: fn(&Self) -> &Tensor<S>| -> Result<Tensor<S>> {
            let tensors: Vec<Tensor<S>> = parts.iter().map(|p| f(p).clone()).collect();
            Ok(Tensor::stack_rows(&tensors)?)
        };
        Ok(Self {
            h: col(|p| &p.h)?,
            z: col(|p| &p.z)?,
            mean: col(|p| &p.mean)?,
            std: col(|p| &p.std)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.h.rows()
    }

    /// `[h, z]` as a plain tensor.
    pub fn features(&self) -> Tensor<S> {
        let (rows, dh, dz) = (self.h.rows(), self.h.cols(), self.z.cols());
        let mut data = Vec::with_capacity(rows * (dh + dz));
        for r in 0..rows {
            data.extend_from_slice(self.h.row(r));
            data.extend_from_slice(self.z.row(r));
        }
        Tensor::new(vec![rows, dh + dz], data).expect("non-empty snapshot")
    }

    /// Loads the snapshot onto `tape` as constants.
    pub fn load(&self, tape: &mut Tape<S>) -> Result<LatentState> {
        let h = tape.constant(self.h.clone());
        let z = tape.constant(self.z.clone());
        let mean = tape.constant(self.mean.clone());
        let std = tape.constant(self.std.clone());
        Ok(LatentState {
            h,
            z,
            dist: DiagonalGaussian::new(tape, mean, std)?,
        })
    }
}

/// Layer structure of the world model; the weights live in a
/// [`ParameterSet`] whose names all start with `wm.`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    encoder: Mlp,
    dyn_in: Linear,
    gru: GruCell,
    prior: Mlp,
    posterior: Mlp,
    decoder: Mlp,
    reward: Mlp,
    cost: Mlp,
    cont: Mlp,
}

impl WorldModel {
    /// Builds the model and initializes its parameters.
    pub fn new<S: Scalar>(config: WorldModelConfig, rng: &mut impl Rng) -> Result<(Self, ParameterSet<S>)> {
        let mut params = ParameterSet::new();
        let model = Self::build(config, &mut params, rng)?;
        Ok((model, params))
    }

    fn build<S: Scalar>(
        config: WorldModelConfig,
        params: &mut ParameterSet<S>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if [config.obs_dim, config.action_dim, config.deter, config.stoch, config.hidden].contains(&0) {
            return Err(Error::Config("world model dimensions must be positive".into()));
        }
        let c = &config;
        let feat = c.feature_dim();
        let model = Self {
            encoder: Mlp::init(params, "wm.enc", &[c.obs_dim, c.hidden, c.hidden], rng)?,
            dyn_in: Linear::init(params, "wm.dyn_in", c.stoch + c.action_dim, c.hidden, rng)?,
            gru: GruCell::init(params, "wm.gru", c.hidden, c.deter, rng)?,
            prior: Mlp::init(params, "wm.prior", &[c.deter, c.hidden, 2 * c.stoch], rng)?,
            posterior: Mlp::init(params, "wm.post", &[c.deter + c.hidden, c.hidden, 2 * c.stoch], rng)?,
            decoder: Mlp::init(params, "wm.dec", &[feat, c.hidden, c.obs_dim], rng)?,
            reward: Mlp::init(params, "wm.rew", &[feat, c.hidden, 1], rng)?,
            cost: Mlp::init(params, "wm.cost", &[feat, c.hidden, 1], rng)?,
            cont: Mlp::init(params, "wm.cont", &[feat, c.hidden, 1], rng)?,
            config,
        };
        Ok(model)
    }

    /// Rebuilds the layer structure for `params`, checking that every
    /// expected parameter is present with the expected shape.
    pub fn for_params<S: Scalar>(config: WorldModelConfig, params: &ParameterSet<S>) -> Result<Self> {
        let mut scratch = ParameterSet::<S>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let model = Self::build(config, &mut scratch, &mut rng)?;
        check_layout(&scratch, params)?;
        Ok(model)
    }

    pub fn initial_state<S: Scalar>(&self, tape: &mut Tape<S>, batch: usize) -> Result<LatentState> {
        let h = tape.constant(Tensor::zeros(&[batch, self.config.deter]));
        let z = tape.constant(Tensor::zeros(&[batch, self.config.stoch]));
        let mean = tape.constant(Tensor::zeros(&[batch, self.config.stoch]));
        let std = tape.constant(Tensor::ones(&[batch, self.config.stoch]));
        Ok(LatentState {
            h,
            z,
            dist: DiagonalGaussian::new(tape, mean, std)?,
        })
    }

    pub fn initial_snapshot<S: Scalar>(&self, batch: usize) -> LatentSnapshot<S> {
        LatentSnapshot {
            h: Tensor::zeros(&[batch, self.config.deter]),
            z: Tensor::zeros(&[batch, self.config.stoch]),
            mean: Tensor::zeros(&[batch, self.config.stoch]),
            std: Tensor::ones(&[batch, self.config.stoch]),
        }
    }

    fn check_cols<S: Scalar>(tape: &Tape<S>, v: Var, what: &'static str, expected: usize) -> Result<()> {
        let got = tape.value(v).cols();
        if tape.shape(v).len() != 2 || got != expected {
            return Err(Error::Dimension { what, expected, got });
        }
        Ok(())
    }

    pub fn embed<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, obs: Var) -> Result<Var> {
        Self::check_cols(tape, obs, "observation", self.config.obs_dim)?;
        let e = self.encoder.forward(tape, params, mode, obs)?;
        Ok(tape.elu(e))
    }

    /// Recurrent update `h' = GRU(elu(W[z, a]), h)`.
    pub fn recurrent<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        prev: &LatentState,
        action: Var,
    ) -> Result<Var> {
        Self::check_cols(tape, action, "action", self.config.action_dim)?;
        let za = tape.concat_cols(&[prev.z, action])?;
        let x = self.dyn_in.forward(tape, params, mode, za)?;
        let x = tape.elu(x);
        Ok(self.gru.forward(tape, params, mode, x, prev.h)?)
    }

    fn gaussian_head<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        head: &Mlp,
        input: Var,
    ) -> Result<DiagonalGaussian> {
        let out = head.forward(tape, params, mode, input)?;
        let s = self.config.stoch;
        let mean = tape.slice_cols(out, 0, s)?;
        let raw = tape.slice_cols(out, s, 2 * s)?;
        Ok(DiagonalGaussian::from_raw(tape, mean, raw, self.config.min_std)?)
    }

    fn sample_state<S: Scalar>(tape: &mut Tape<S>, h: Var, dist: DiagonalGaussian, noise: Var) -> Result<LatentState> {
        let z = dist.sample(tape, noise)?;
        Ok(LatentState { h, z, dist })
    }

    pub fn prior_dist<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, h: Var) -> Result<DiagonalGaussian> {
        self.gaussian_head(tape, params, mode, &self.prior, h)
    }

    pub fn posterior_dist<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        h: Var,
        embed: Var,
    ) -> Result<DiagonalGaussian> {
        let he = tape.concat_cols(&[h, embed])?;
        self.gaussian_head(tape, params, mode, &self.posterior, he)
    }

    /// Filtering step: recurrent update, then `z` from the posterior given
    /// the observation.
    #[allow(clippy::too_many_arguments)]
    pub fn posterior_step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        prev: &LatentState,
        prev_action: Var,
        observation: Var,
        noise: Var,
    ) -> Result<LatentState> {
        let embed = self.embed(tape, params, mode, observation)?;
        let h = self.recurrent(tape, params, mode, prev, prev_action)?;
        let dist = self.posterior_dist(tape, params, mode, h, embed)?;
        Self::sample_state(tape, h, dist, noise)
    }

    /// Imagination step: recurrent update, then `z` from the prior only.
    pub fn prior_step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        prev: &LatentState,
        prev_action: Var,
        noise: Var,
    ) -> Result<LatentState> {
        let h = self.recurrent(tape, params, mode, prev, prev_action)?;
        let dist = self.prior_dist(tape, params, mode, h)?;
        Self::sample_state(tape, h, dist, noise)
    }

    pub fn features<S: Scalar>(&self, tape: &mut Tape<S>, state: &LatentState) -> Result<Var> {
        Ok(tape.concat_cols(&[state.h, state.z])?)
    }

    /// Mean of the unit-variance observation Gaussian for features `feat`.
    pub fn decode_features<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, feat: Var) -> Result<Var> {
        Ok(self.decoder.forward(tape, params, mode, feat)?)
    }

    /// Observation distribution: learned mean, unit standard deviation.
    pub fn decode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        state: &LatentState,
    ) -> Result<DiagonalGaussian> {
        let feat = self.features(tape, state)?;
        let mean = self.decode_features(tape, params, mode, feat)?;
        let rows = tape.value(mean).rows();
        let std = tape.constant(Tensor::ones(&[rows, self.config.obs_dim]));
        Ok(DiagonalGaussian::new(tape, mean, std)?)
    }

    /// Mean of the unit-variance reward Gaussian, `[rows, 1]`.
    pub fn reward_features<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, feat: Var) -> Result<Var> {
        Ok(self.reward.forward(tape, params, mode, feat)?)
    }

    pub fn cost_logit_features<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, feat: Var) -> Result<Var> {
        Ok(self.cost.forward(tape, params, mode, feat)?)
    }

    pub fn cont_logit_features<S: Scalar>(&self, tape: &mut Tape<S>, params: &ParameterSet<S>, mode: Load, feat: Var) -> Result<Var> {
        Ok(self.cont.forward(tape, params, mode, feat)?)
    }

    pub fn predict_reward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        state: &LatentState,
    ) -> Result<Var> {
        let feat = self.features(tape, state)?;
        self.reward_features(tape, params, mode, feat)
    }

    /// Probability that the state is unsafe.
    pub fn predict_cost<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        state: &LatentState,
    ) -> Result<Var> {
        let feat = self.features(tape, state)?;
        let logit = self.cost_logit_features(tape, params, mode, feat)?;
        Ok(tape.sigmoid(logit))
    }

    /// Probability that the episode continues past the state.
    pub fn predict_continuation<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        state: &LatentState,
    ) -> Result<Var> {
        let feat = self.features(tape, state)?;
        let logit = self.cont_logit_features(tape, params, mode, feat)?;
        Ok(tape.sigmoid(logit))
    }
}

/// Checks that `actual` holds every parameter of `expected` with the same
/// shape.
pub(crate) fn check_layout<S: Scalar>(expected: &ParameterSet<S>, actual: &ParameterSet<S>) -> Result<()> {
    for (name, p) in expected.iter() {
        let got = actual
            .get(name)
            .map_err(|_| Error::Incompatible(format!("missing parameter `{name}`")))?;
        if got.shape() != p.value.shape() {
            return Err(Error::Incompatible(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                got.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::autodiff::{check_gradients, kl_diag_gaussian, GradCheck};
    use rand_chacha::ChaCha8Rng;


    #[test]
    fn posterior_step_is_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (wm, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
        let obs = rand_tensor(3, 3, &mut rng);
        let act = rand_tensor(3, 2, &mut rng);
        let noise = rand_tensor(3, 2, &mut rng);
        let run = || {
            let mut t = Tape::new();
            let s0 = wm.initial_state(&mut t, 3).unwrap();
            let o = t.constant(obs.clone());
            let a = t.constant(act.clone());
            let n = t.constant(noise.clone());
            let s = wm.posterior_step(&mut t, &params, Load::Train, &s0, a, o, n).unwrap();
            s.snapshot(&t)
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.h.shape(), &[3, 4]);
        assert_eq!(a.z.shape(), &[3, 2]);
        assert!(a.std.data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn rejects_wrong_observation_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (wm, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
        let mut t = Tape::new();
        let s0 = wm.initial_state(&mut t, 1).unwrap();
        let o = t.constant(Tensor::zeros(&[1, 4]));
        let a = t.constant(Tensor::zeros(&[1, 2]));
        let n = t.constant(Tensor::zeros(&[1, 2]));
        let err = wm
            .posterior_step(&mut t, &params, Load::Train, &s0, a, o, n)
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { what: "observation", expected: 3, got: 4 }));
    }

    #[test]
    fn posterior_step_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (wm, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
            let obs = rand_tensor(2, 3, &mut rng);
            let act = rand_tensor(2, 2, &mut rng);
            let noise = rand_tensor(2, 2, &mut rng);
            let report = check_gradients(
                |t, p| {
                    let s0 = wm.initial_state(t, 2)?;
                    let o = t.constant(obs.clone());
                    let a = t.constant(act.clone());
                    let n = t.constant(noise.clone());
                    let s = wm.posterior_step(t, p, Load::Train, &s0, a, o, n)?;
                    let s = wm.posterior_step(t, p, Load::Train, &s, a, o, n)?;
                    let f = wm.features(t, &s)?;
                    let f = t.tanh(f);
                    Ok::<_, Error>(t.sum(f))
                },
                &params,
                GradCheck::default(),
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }

    #[test]
    fn decode_is_valid_untrained_and_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (wm, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
        let noise = rand_tensor(2, 2, &mut rng);
        let act = rand_tensor(2, 2, &mut rng);
        let report = check_gradients(
            |t, p| {
                let s0 = wm.initial_state(t, 2)?;
                let a = t.constant(act.clone());
                let n = t.constant(noise.clone());
                let s = wm.prior_step(t, p, Load::Train, &s0, a, n)?;
                let d = wm.decode(t, p, Load::Train, &s)?;
                assert!(t.value(d.mean).is_finite());
                let c = wm.predict_cost(t, p, Load::Train, &s)?;
                assert!(t.value(c).data().iter().all(|&x| x > 0.0 && x < 1.0));
                let sq = t.square(d.mean);
                Ok::<_, Error>(t.sum(sq))
            },
            &params,
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn posterior_copying_prior_gives_zero_kl() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (wm, mut params) = WorldModel::new::<f64>(cfg.clone(), &mut rng).unwrap();
        copy_prior_into_posterior(&cfg, &mut params);
        let mut t = Tape::new();
        let s0 = wm.initial_state(&mut t, 2).unwrap();
        let a = t.constant(rand_tensor(2, 2, &mut rng));
        let o = t.constant(rand_tensor(2, 3, &mut rng));
        let n = t.constant(Tensor::zeros(&[2, 2]));
        let post = wm.posterior_step(&mut t, &params, Load::Train, &s0, a, o, n).unwrap();
        let prior = wm.prior_dist(&mut t, &params, Load::Train, post.h).unwrap();
        let kl = kl_diag_gaussian(&mut t, &post.dist, &prior).unwrap();
        assert_eq!(t.value(kl).item(), 0.0);
    }

    #[test]
    fn prior_rollout_has_requested_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (wm, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
        let mut t = Tape::new();
        let mut s = wm.initial_state(&mut t, 1).unwrap();
        let a = t.constant(Tensor::zeros(&[1, 2]));
        let n = t.constant(Tensor::zeros(&[1, 2]));
        let mut steps = Vec::new();
        for _ in 0..7 {
            s = wm.prior_step(&mut t, &params, Load::Frozen, &s, a, n).unwrap();
            steps.push(s);
        }
        assert_eq!(steps.len(), 7);
    }

    #[test]
    fn layout_check_detects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, params) = WorldModel::new::<f64>(tiny_config(), &mut rng).unwrap();
        assert!(WorldModel::for_params(tiny_config(), &params).is_ok());
        let mut other = tiny_config();
        other.deter = 5;
        assert!(matches!(
            WorldModel::for_params(other, &params),
            Err(Error::Incompatible(_))
        ));
    }
}
