//! Training, evaluation and comparison runs with their on-disk artifacts.
//!
//! A run alternates environment collection (intervention oracle active),
//! replay appends, world-model updates and imagined actor-critic updates,
//! and moves the Lagrange multiplier once per finished episode.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{LatentSizes, Overrides, RunConfig, ScenarioChoice};

use crate::agent::{update_multiplier, ActMode, ActorCritic, SafetyBudget, UpdateReport};
use crate::autodiff::{adam_step, AdamConfig, Checkpoint, ParameterSet, Tape, Tensor};
use crate::eval::{comparison_report, curve_csv, read_csv, reward_curve, write_csv, EpisodeLog, MetricsReport, CURVE_WINDOW};
use crate::nn::Load;
use crate::replay::{ReplayBuffer, Transition};
use crate::sim::{write_trajectory, Env, ScenarioSpec, StepRecord};
use crate::world_model::{world_model_loss, LatentSnapshot, LossTerms, WorldModel, WorldModelConfig};
use crate::{Error, Result};

pub const ACTION_DIM: usize = 2;
/// Consecutive non-finite updates tolerated before a run aborts.
pub const MAX_NONFINITE_STREAK: usize = 10;

/// World model plus actor-critic with their parameters.
#[derive(Clone, Debug)]
pub struct Models {
    pub wm: WorldModel,
    pub wm_params: ParameterSet<f64>,
    pub ac: ActorCritic,
    pub actor_params: ParameterSet<f64>,
    pub critic_params: ParameterSet<f64>,
}

impl Models {
    pub fn new(cfg: &RunConfig, obs_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let wm_cfg = cfg.world_model_config(obs_dim);
        let (wm, wm_params) = WorldModel::new(wm_cfg.clone(), rng)?;
        let (ac, actor_params, critic_params) =
            ActorCritic::new(wm_cfg.feature_dim(), ACTION_DIM, cfg.agent.clone(), rng)?;
        Ok(Self {
            wm,
            wm_params,
            ac,
            actor_params,
            critic_params,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.wm.config.obs_dim
    }

    fn checkpoint(&self, cfg: &RunConfig, fingerprint: &str, budget: &SafetyBudget, env_steps: u64) -> Result<Checkpoint<f64>> {
        let mut ck = Checkpoint::new(cfg.seed, fingerprint);
        // The output directory is left out so runs that differ only in
        // where they write produce identical checkpoints.
        let canon = RunConfig {
            out: PathBuf::new(),
            ..cfg.clone()
        };
        ck.meta.insert("config".into(), serde_json::to_string(&canon)?);
        ck.meta.insert("specs".into(), serde_json::to_string(&cfg.scenario.resolve()?)?);
        ck.meta.insert("world_model".into(), serde_json::to_string(&self.wm.config)?);
        ck.meta.insert("multiplier".into(), budget.multiplier.to_string());
        ck.meta.insert("env_steps".into(), env_steps.to_string());
        ck.groups.insert("world_model".into(), self.wm_params.clone());
        ck.groups.insert("actor".into(), self.actor_params.clone());
        ck.groups.insert("critic".into(), self.critic_params.clone());
        Ok(ck)
    }

    /// Rebuilds models from a checkpoint after checking that its recorded
    /// configuration still hashes to its fingerprint.
    pub fn from_checkpoint(ck: &Checkpoint<f64>) -> Result<(Self, RunConfig)> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks `{k}` metadata")))
        };
        let cfg: RunConfig = serde_json::from_str(meta("config")?)?;
        let specs: Vec<ScenarioSpec> = serde_json::from_str(meta("specs")?)?;
        let recorded = config::fingerprint_of(&cfg, &specs)?;
        if recorded != ck.fingerprint {
            return Err(Error::Incompatible(format!(
                "fingerprint {} does not match recorded configuration ({recorded})",
                ck.fingerprint
            )));
        }
        let wm_cfg: WorldModelConfig = serde_json::from_str(meta("world_model")?)?;
        let wm_params = ck.group("world_model")?.clone();
        let actor_params = ck.group("actor")?.clone();
        let critic_params = ck.group("critic")?.clone();
        let wm = WorldModel::for_params(wm_cfg.clone(), &wm_params)?;
        let ac = ActorCritic::for_params(
            wm_cfg.feature_dim(),
            wm_cfg.action_dim,
            cfg.agent.clone(),
            &actor_params,
            &critic_params,
        )?;
        Ok((
            Self {
                wm,
                wm_params,
                ac,
                actor_params,
                critic_params,
            },
            cfg,
        ))
    }
}

/// Posterior filter that tracks the latent state while driving.
struct Driver {
    state: LatentSnapshot<f64>,
    prev_action: Tensor<f64>,
}

impl Driver {
    fn new(models: &Models) -> Self {
        Self {
            state: models.wm.initial_snapshot(1),
            prev_action: Tensor::zeros(&[1, ACTION_DIM]),
        }
    }

    /// Folds in an observation reached after `prev_action`. Latents use the
    /// posterior mean.
    fn observe(&mut self, models: &Models, features: &[f64]) -> Result<()> {
        let mut tape = Tape::new();
        let prev = self.state.load(&mut tape)?;
        let a = tape.constant(self.prev_action.clone());
        let o = tape.constant(Tensor::row_vector(features.to_vec())?);
        let n = tape.constant(Tensor::zeros(&[1, models.wm.config.stoch]));
        let next = models.wm.posterior_step(&mut tape, &models.wm_params, Load::Frozen, &prev, a, o, n)?;
        self.state = next.snapshot(&tape);
        Ok(())
    }

    fn act(&mut self, models: &Models, mode: ActMode, rng: &mut impl Rng) -> Result<[f64; 2]> {
        let noise = Tensor::new(vec![1, ACTION_DIM], (0..ACTION_DIM).map(|_| rng.sample(StandardNormal)).collect())?;
        let a = models.ac.actor.act(&models.actor_params, &self.state, mode, &noise)?;
        self.commit([a.data()[0], a.data()[1]])
    }

    fn commit(&mut self, action: [f64; 2]) -> Result<[f64; 2]> {
        self.prev_action = Tensor::row_vector(action.to_vec())?;
        Ok(action)
    }
}

fn episode_seed(run_seed: u64, salt: u64, episode: u64) -> u64 {
    run_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(episode)
}

const TRAIN_SALT: u64 = 1;
const EVAL_SALT: u64 = 2;

fn normals(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("positive dims")
}

/// One world-model step; returns its loss terms and a batch of detached
/// posterior states to imagine from.
fn world_model_update(
    models: &mut Models,
    replay: &ReplayBuffer,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossTerms, LatentSnapshot<f64>)> {
    let sampled = replay.sample_sequences::<f64>(cfg.batch, cfg.seq_len, rng)?;
    let noise: Vec<Tensor<f64>> = (0..cfg.seq_len).map(|_| normals(rng, cfg.batch, cfg.latent.stoch)).collect();
    let mut tape = Tape::new();
    let out = world_model_loss(&mut tape, &models.wm, &models.wm_params, &sampled.batch, &noise, &cfg.loss)?;
    let grads = tape.backward(out.loss)?.params();
    adam_step(&mut models.wm_params, &grads, &AdamConfig::with_lr(cfg.wm_lr))?;
    let snaps: Vec<LatentSnapshot<f64>> = out.posteriors.iter().map(|p| p.snapshot(&tape)).collect();
    let all = LatentSnapshot::stack(&snaps)?;
    let rows: Vec<usize> = (0..cfg.imagine_starts).map(|_| rng.random_range(0..all.rows())).collect();
    let pick = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let parts: Vec<Tensor<f64>> = rows.iter().map(|&r| t.slice_rows(r, r + 1)).collect();
        Ok(Tensor::stack_rows(&parts)?)
    };
    let start = LatentSnapshot {
        h: pick(&all.h)?,
        z: pick(&all.z)?,
        mean: pick(&all.mean)?,
        std: pick(&all.std)?,
    };
    Ok((out.terms, start))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub env_steps: u64,
    pub scenario: String,
    pub length: usize,
    pub total_reward: f64,
    pub discounted_cost: f64,
    pub interventions: usize,
    pub goal: bool,
    /// Multiplier after this episode's update.
    pub multiplier: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub fingerprint: String,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: Vec<EpisodeSummary>,
    pub budget: SafetyBudget,
    pub models: Models,
    pub checkpoint: PathBuf,
    pub evaluation: Option<EvalOutcome>,
}

/// Line-oriented JSON diagnostics, each line tagged with the fingerprint.
struct Diagnostics {
    out: BufWriter<File>,
    fingerprint: String,
    path: PathBuf,
}

impl Diagnostics {
    fn create(path: PathBuf, fingerprint: &str) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(&path)?),
            fingerprint: fingerprint.to_owned(),
            path,
        })
    }

    fn write(&mut self, kind: &str, mut body: serde_json::Value) -> Result<()> {
        if let Some(map) = body.as_object_mut() {
            map.insert("kind".into(), json!(kind));
            map.insert("fingerprint".into(), json!(self.fingerprint));
        }
        serde_json::to_writer(&mut self.out, &body)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub fingerprint: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    /// Hashes every listed file (paths relative to `root`) and writes
    /// `manifest.json` there.
    fn write(root: &Path, command: &str, fingerprint: &str, seed: u64, files: &[PathBuf]) -> Result<Self> {
        let mut artifacts = Vec::new();
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(f);
            artifacts.push(Artifact {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: config::sha256_file(f)?,
                fingerprint: fingerprint.to_owned(),
            });
        }
        let m = Self {
            command: command.to_owned(),
            fingerprint: fingerprint.to_owned(),
            seed,
            artifacts,
        };
        std::fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

/// Full training run. Writes everything under `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let specs = cfg.scenario.resolve()?;
    let fingerprint = cfg.fingerprint()?;
    let obs_dim = specs[0].observation_dim();
    let out = &cfg.out;
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let mut files = Vec::new();
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()?)?;
    files.push(config_path);
    let diag_path = out.join("diagnostics.jsonl");
    let mut diag = Diagnostics::create(diag_path.clone(), &fingerprint)?;
    diag.write("run", json!({ "seed": cfg.seed, "steps": cfg.steps, "scenarios": specs.iter().map(|s| &s.name).collect::<Vec<_>>() }))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models = Models::new(cfg, obs_dim, &mut rng)?;
    let mut budget = cfg.budget.clone();
    let initial = out.join("checkpoints").join("initial.ckpt");
    models.checkpoint(cfg, &fingerprint, &budget, 0)?.save(&initial)?;
    files.push(initial.clone());
    if cfg.steps == 0 {
        diag.write("done", json!({ "env_steps": 0, "updates": 0, "multiplier": budget.multiplier }))?;
        diag.out.flush()?;
        drop(diag);
        files.push(diag_path);
        Manifest::write(out, "train", &fingerprint, cfg.seed, &files)?;
        return Ok(TrainOutcome {
            fingerprint,
            env_steps: 0,
            updates: 0,
            episodes: Vec::new(),
            budget,
            models,
            checkpoint: initial,
            evaluation: None,
        });
    }

    let mut replay = ReplayBuffer::new(cfg.replay_capacity, obs_dim, ACTION_DIM)?;
    let gamma = cfg.agent.gamma;
    let mut env_steps = 0u64;
    let mut updates = 0u64;
    let mut streak = 0usize;
    let mut episodes = Vec::new();
    let mut episode = 0u64;

    while env_steps < cfg.steps {
        let spec = &specs[(episode % specs.len() as u64) as usize];
        let (mut env, obs) = Env::reset(spec, episode_seed(cfg.seed, TRAIN_SALT, episode))?;
        // Episodes that began under random warmup actions say nothing about the policy.
        let policy_episode = env_steps >= cfg.warmup;
        let mut feats = obs.features(env.spec());
        replay.append(start_transition(&feats))?;
        let mut driver = Driver::new(&models);
        driver.observe(&models, &feats)?;
        let (mut total_reward, mut disc_cost, mut discount) = (0.0, 0.0, 1.0);
        let (mut length, mut interventions, mut goal, mut finished) = (0usize, 0usize, false, false);

        while env_steps < cfg.steps {
            let action = if env_steps < cfg.warmup {
                driver.commit([rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])?
            } else {
                driver.act(&models, ActMode::Explore, &mut rng)?
            };
            let step = env.step(action)?;
            env_steps += 1;
            length += 1;
            total_reward += step.reward;
            disc_cost += discount * step.cost;
            discount *= gamma;
            let terminal = step.info.collision || step.info.goal;
            let intervened = !step.terminated && env.intervention_needed();
            feats = step.observation.features(env.spec());
            replay.append(Transition {
                observation: feats.clone(),
                action: action.to_vec(),
                reward: step.reward,
                cost: step.cost,
                terminated: terminal,
                intervened,
            })?;
            if intervened {
                interventions += 1;
                feats = env.intervene().features(env.spec());
                replay.append(start_transition(&feats))?;
                driver = Driver::new(&models);
                driver.observe(&models, &feats)?;
            } else if !step.terminated {
                driver.observe(&models, &feats)?;
            }

            if env_steps > cfg.warmup && env_steps % cfg.train_every == 0 && replay.segment_count(cfg.seq_len) > 0 {
                match update(&mut models, &replay, cfg, budget.multiplier, &mut rng) {
                    Ok((terms, report)) => {
                        streak = 0;
                        updates += 1;
                        if updates % 25 == 1 {
                            diag.write(
                                "update",
                                json!({
                                    "env_steps": env_steps,
                                    "updates": updates,
                                    "world_model": terms_json(&terms),
                                    "actor_loss": report.actor.total,
                                    "advantage": report.actor.advantage,
                                    "cost_return": report.actor.cost_return,
                                    "entropy": report.actor.entropy,
                                    "critic_loss": report.critic_loss,
                                    "imagined_cost": report.imagined_cost,
                                    "value_mean": report.value_mean,
                                    "actor_grad_norm": report.actor_grad_norm,
                                    "critic_grad_norm": report.critic_grad_norm,
                                    "multiplier": budget.multiplier,
                                }),
                            )?;
                        }
                    }
                    Err(e) if e.is_numeric() => {
                        streak += 1;
                        diag.write("nonfinite", json!({ "env_steps": env_steps, "error": e.to_string() }))?;
                        if streak > MAX_NONFINITE_STREAK {
                            diag.out.flush()?;
                            return Err(Error::Diverged {
                                streak,
                                diagnostics: diag.path.clone(),
                            });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            if cfg.checkpoint_every > 0 && env_steps % cfg.checkpoint_every == 0 {
                let p = out.join("checkpoints").join(format!("step_{env_steps:08}.ckpt"));
                models.checkpoint(cfg, &fingerprint, &budget, env_steps)?.save(&p)?;
                files.push(p);
            }
            if step.terminated {
                goal = step.info.goal;
                finished = true;
                if step.truncated() {
                    replay.close_episode();
                }
                break;
            }
        }
        replay.close_episode();
        if finished {
            if cfg.constrained && policy_episode {
                budget = update_multiplier(disc_cost, &budget);
            }
            let summary = EpisodeSummary {
                episode,
                env_steps,
                scenario: spec.name.clone(),
                length,
                total_reward,
                discounted_cost: disc_cost,
                interventions,
                goal,
                multiplier: budget.multiplier,
            };
            diag.write("episode", serde_json::to_value(&summary)?)?;
            episodes.push(summary);
        }
        episode += 1;
    }

    let final_ck = out.join("checkpoint.ckpt");
    models.checkpoint(cfg, &fingerprint, &budget, env_steps)?.save(&final_ck)?;
    files.push(final_ck.clone());

    let episodes_path = out.join("episodes.csv");
    let mut w = csv::Writer::from_path(&episodes_path).map_err(|e| Error::Config(e.to_string()))?;
    for e in &episodes {
        w.serialize(e).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    files.push(episodes_path);
    let curve: Vec<(u64, f64)> = episodes.iter().map(|e| (e.env_steps, e.total_reward)).collect();
    let curve_path = out.join("reward_curve.csv");
    std::fs::write(&curve_path, curve_csv(&reward_curve(&curve, CURVE_WINDOW))?)?;
    files.push(curve_path);

    let evaluation = if cfg.eval_episodes > 0 {
        let ev = evaluate_models(&models, &specs, cfg.eval_episodes, cfg.seed, gamma, &fingerprint)?;
        files.extend(ev.write(&out.join("eval"))?);
        Some(ev)
    } else {
        None
    };
    diag.write("done", json!({ "env_steps": env_steps, "updates": updates, "multiplier": budget.multiplier }))?;
    diag.out.flush()?;
    drop(diag);
    files.push(diag_path);
    Manifest::write(out, "train", &fingerprint, cfg.seed, &files)?;

    Ok(TrainOutcome {
        fingerprint,
        env_steps,
        updates,
        episodes,
        budget,
        models,
        checkpoint: final_ck,
        evaluation,
    })
}

fn start_transition(obs: &[f64]) -> Transition {
    Transition {
        observation: obs.to_vec(),
        action: vec![0.0; ACTION_DIM],
        reward: 0.0,
        cost: 0.0,
        terminated: false,
        intervened: false,
    }
}

fn terms_json(t: &LossTerms) -> serde_json::Value {
    json!({
        "kl_prior": t.kl_prior,
        "kl_posterior": t.kl_posterior,
        "kl_raw": t.kl_raw,
        "observation_nll": t.observation_nll,
        "reward_nll": t.reward_nll,
        "cost_nll": t.cost_nll,
        "continuation_nll": t.continuation_nll,
        "total": t.total,
    })
}

/// World-model step followed by one actor-critic step from its posteriors.
/// A step that fails numerically leaves `models` untouched.
pub fn update(
    models: &mut Models,
    replay: &ReplayBuffer,
    cfg: &RunConfig,
    multiplier: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LossTerms, UpdateReport)> {
    let before = models.clone();
    let result = try_update(models, replay, cfg, multiplier, rng).and_then(|r| {
        for (name, p) in [("world model", &models.wm_params), ("actor", &models.actor_params), ("critic", &models.critic_params)] {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("{name} parameters"),
                });
            }
        }
        Ok(r)
    });
    if result.as_ref().is_err_and(Error::is_numeric) {
        *models = before;
    }
    result
}

fn try_update(
    models: &mut Models,
    replay: &ReplayBuffer,
    cfg: &RunConfig,
    multiplier: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(LossTerms, UpdateReport)> {
    let (terms, start) = world_model_update(models, replay, cfg, rng)?;
    let report = models.ac.update(
        &models.wm,
        &models.wm_params,
        &mut models.actor_params,
        &mut models.critic_params,
        &start,
        multiplier,
        rng,
    )?;
    for (name, v) in [("actor loss", report.actor.total), ("critic loss", report.critic_loss)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term: name.into() });
        }
    }
    Ok((terms, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub logs: Vec<EpisodeLog>,
    pub scenarios: Vec<String>,
    /// Discounted cost per episode.
    pub discounted_costs: Vec<f64>,
}

impl EvalOutcome {
    pub fn mean_return(&self) -> f64 {
        self.logs.iter().map(EpisodeLog::total_reward).sum::<f64>() / self.logs.len() as f64
    }

    pub fn mean_discounted_cost(&self) -> f64 {
        self.discounted_costs.iter().sum::<f64>() / self.discounted_costs.len() as f64
    }

    /// Writes the report, a per-episode summary and one trajectory file per
    /// episode under `dir`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let traj_dir = dir.join("trajectories");
        std::fs::create_dir_all(&traj_dir)?;
        let mut files = Vec::new();
        let report = dir.join("report.json");
        self.report.save(&report)?;
        files.push(report);
        let summary = dir.join("episodes.jsonl");
        let mut w = BufWriter::new(File::create(&summary)?);
        for (i, log) in self.logs.iter().enumerate() {
            let t = traj_dir.join(format!("episode_{i:04}.jsonl"));
            write_trajectory(&t, &log.steps)?;
            files.push(t);
            serde_json::to_writer(
                &mut w,
                &json!({
                    "episode": i,
                    "scenario": self.scenarios[i],
                    "fingerprint": self.report.fingerprint,
                    "dt": log.dt,
                    "distance": log.distance,
                    "completed": log.completed,
                    "interventions": log.interventions(),
                    "total_reward": log.total_reward(),
                    "discounted_cost": self.discounted_costs[i],
                }),
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        files.push(summary);
        Ok(files)
    }
}

/// Greedy rollouts with the intervention oracle active. Environment seeds
/// come from a stream disjoint from training.
pub fn evaluate_models(
    models: &Models,
    specs: &[ScenarioSpec],
    episodes: usize,
    seed: u64,
    gamma: f64,
    fingerprint: &str,
) -> Result<EvalOutcome> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    if specs.is_empty() {
        return Err(Error::Empty("scenarios"));
    }
    for s in specs {
        if s.observation_dim() != models.obs_dim() {
            return Err(Error::Incompatible(format!(
                "checkpoint expects observation {} / action {}, scenario `{}` gives observation {} / action {ACTION_DIM}",
                models.obs_dim(),
                models.wm.config.action_dim,
                s.name,
                s.observation_dim()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(episodes);
    let mut names = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let spec = &specs[i % specs.len()];
        let (mut env, obs) = Env::reset(spec, episode_seed(seed, EVAL_SALT, i as u64))?;
        let dt = env.spec().physics.dt;
        let mut driver = Driver::new(models);
        driver.observe(models, &obs.features(env.spec()))?;
        let mut steps = Vec::new();
        let (mut cost, mut discount) = (0.0, 1.0);
        let completed = loop {
            let from = env.state();
            let action = driver.act(models, ActMode::Greedy, &mut rng)?;
            let out = env.step(action)?;
            cost += discount * out.cost;
            discount *= gamma;
            let intervened = !out.terminated && env.intervention_needed();
            steps.push(StepRecord {
                time: env.time(),
                from: [from.x, from.y],
                position: [out.state.x, out.state.y],
                speed: out.state.speed,
                action,
                reward: out.reward,
                cost: out.cost,
                intervened,
            });
            if out.terminated {
                break out.info.goal;
            }
            if intervened {
                let o = env.intervene();
                driver = Driver::new(models);
                driver.observe(models, &o.features(env.spec()))?;
            } else {
                driver.observe(models, &out.observation.features(env.spec()))?;
            }
        };
        logs.push(EpisodeLog::new(dt, steps, completed)?);
        names.push(spec.name.clone());
        costs.push(cost);
    }
    Ok(EvalOutcome {
        report: MetricsReport::from_logs(&logs, fingerprint)?,
        logs,
        scenarios: names,
        discounted_costs: costs,
    })
}

/// Loads a checkpoint and evaluates it; `scenario` defaults to the one it
/// was trained on. Writes artifacts and a manifest when `out` is given.
pub fn evaluate(
    checkpoint: &Path,
    scenario: Option<&ScenarioChoice>,
    episodes: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<EvalOutcome> {
    let ck = Checkpoint::<f64>::load(checkpoint).map_err(|e| Error::Incompatible(format!("{}: {e}", checkpoint.display())))?;
    let (models, cfg) = Models::from_checkpoint(&ck)?;
    let specs = scenario.unwrap_or(&cfg.scenario).resolve()?;
    let ev = evaluate_models(&models, &specs, episodes, seed, cfg.agent.gamma, &ck.fingerprint)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let files = ev.write(dir)?;
        Manifest::write(dir, "evaluate", &ck.fingerprint, seed, &files)?;
    }
    Ok(ev)
}

/// Row name for a report file: its stem, or for the generic
/// `<run>/eval/report.json` layout the nearest directory that names the run.
fn row_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem != "report" {
        return stem;
    }
    path.ancestors()
        .skip(1)
        .filter_map(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .find(|n| n != "eval")
        .unwrap_or(stem)
}

/// Loads report files (`.json` reports or `.csv` tables), ranks them, and
/// writes `comparison.csv` and `comparison.txt` under `out`.
pub fn compare(paths: &[PathBuf], out: &Path) -> Result<String> {
    let mut rows = Vec::new();
    for p in paths {
        if p.extension().is_some_and(|e| e == "csv") {
            let text = std::fs::read_to_string(p)?;
            rows.extend(read_csv(&text, p)?);
        } else {
            rows.push((row_name(p), MetricsReport::load(p)?));
        }
    }
    let cmp = comparison_report(&rows)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("comparison.csv");
    std::fs::write(&csv_path, write_csv(&rows)?)?;
    let txt_path = out.join("comparison.txt");
    let text = cmp.render();
    std::fs::write(&txt_path, &text)?;
    let mut h = Sha256::new();
    for (name, r) in &rows {
        h.update(name.as_bytes());
        h.update(r.fingerprint.as_bytes());
    }
    let fp = config::hex(&h.finalize());
    Manifest::write(out, "compare", &fp, 0, &[csv_path, txt_path])?;
    Ok(text)
}
