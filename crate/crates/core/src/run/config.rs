use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, SafetyBudget};
use crate::sim::{curriculum, shortcut, ScenarioSpec};
use crate::world_model::{LossWeights, WorldModelConfig};
use crate::{Error, Result};

/// Which scenarios a run drives in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenarioChoice {
    /// Curriculum stage 1, 2 or 3.
    Stage(u32),
    /// A scenario file.
    Spec(PathBuf),
    /// The shortcut scenario with a cost region on the fast line.
    Shortcut,
}

impl ScenarioChoice {
    pub fn resolve(&self) -> Result<Vec<ScenarioSpec>> {
        match self {
            ScenarioChoice::Stage(s) => curriculum(*s),
            ScenarioChoice::Spec(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!("scenario file {} does not exist", path.display())));
                }
                Ok(vec![ScenarioSpec::load(path)?])
            }
            ScenarioChoice::Shortcut => Ok(vec![shortcut()]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSizes {
    pub deter: usize,
    pub stoch: usize,
    pub hidden: usize,
}

impl Default for LatentSizes {
    fn default() -> Self {
        Self {
            deter: 32,
            stoch: 8,
            hidden: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioChoice,
    /// Total environment steps.
    pub steps: u64,
    /// Leading steps taken with uniform random actions.
    pub warmup: u64,
    /// One gradient update per this many environment steps.
    pub train_every: u64,
    pub batch: usize,
    pub seq_len: usize,
    /// Posterior states used as imagination starts per update.
    pub imagine_starts: usize,
    pub latent: LatentSizes,
    pub wm_lr: f64,
    pub loss: LossWeights,
    pub agent: AgentConfig,
    pub budget: SafetyBudget,
    /// When false the multiplier stays at its initial value.
    pub constrained: bool,
    pub replay_capacity: usize,
    /// Greedy evaluation episodes run after training (0 skips).
    pub eval_episodes: usize,
    /// Extra checkpoint every this many steps (0 keeps only initial and final).
    pub checkpoint_every: u64,
    /// Output directory. Not part of the fingerprint.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioChoice::Stage(1),
            steps: 200_000,
            warmup: 1_000,
            train_every: 4,
            batch: 16,
            seq_len: 16,
            imagine_starts: 64,
            latent: LatentSizes::default(),
            wm_lr: 6e-4,
            loss: LossWeights::default(),
            agent: AgentConfig {
                hidden: 32,
                actor_lr: 8e-5,
                critic_lr: 3e-4,
                ..AgentConfig::default()
            },
            budget: SafetyBudget::default(),
            constrained: true,
            replay_capacity: crate::replay::DEFAULT_CAPACITY,
            eval_episodes: 100,
            checkpoint_every: 0,
            out: PathBuf::from("runs/latest"),
        }
    }
}

/// Values given on the command line; each replaces the config-file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stage: Option<u32>,
    pub spec: Option<PathBuf>,
    pub steps: Option<u64>,
    pub budget: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with_keys(path)?.0)
    }

    /// Like [`RunConfig::load`], also returning the top-level keys the file
    /// sets, for [`RunConfig::apply`].
    pub fn load_with_keys(path: &Path) -> Result<(Self, BTreeSet<String>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let parse = |e: toml::de::Error| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        };
        let table: toml::Table = toml::from_str(&text).map_err(parse)?;
        let cfg = toml::from_str(&text).map_err(parse)?;
        Ok((cfg, table.keys().cloned().collect()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies command-line values. `file_keys` are the keys set by a config
    /// file; returns one warning per such value that a flag replaced.
    pub fn apply(&mut self, o: &Overrides, file_keys: &BTreeSet<String>) -> Vec<String> {
        let mut warnings = Vec::new();
        let mut note = |what: &str, key: &str, old: String, new: String| {
            if file_keys.contains(key) && old != new {
                warnings.push(format!("--{what} {new} overrides config value {old}"));
            }
        };
        if let Some(v) = o.seed {
            note("seed", "seed", self.seed.to_string(), v.to_string());
            self.seed = v;
        }
        if let Some(v) = o.steps {
            note("steps", "steps", self.steps.to_string(), v.to_string());
            self.steps = v;
        }
        if let Some(v) = o.budget {
            note("budget", "budget", self.budget.limit.to_string(), v.to_string());
            self.budget.limit = v;
        }
        if let Some(v) = &o.out {
            note("out", "out", self.out.display().to_string(), v.display().to_string());
            self.out = v.clone();
        }
        if let Some(v) = o.stage {
            note("stage", "scenario", format!("{:?}", self.scenario), format!("{:?}", ScenarioChoice::Stage(v)));
            self.scenario = ScenarioChoice::Stage(v);
        }
        if let Some(v) = &o.spec {
            note("spec", "scenario", format!("{:?}", self.scenario), format!("{:?}", ScenarioChoice::Spec(v.clone())));
            self.scenario = ScenarioChoice::Spec(v.clone());
        }
        warnings
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_every", self.train_every as usize),
            ("batch", self.batch),
            ("seq_len", self.seq_len),
            ("imagine_starts", self.imagine_starts),
            ("latent.deter", self.latent.deter),
            ("latent.stoch", self.latent.stoch),
            ("latent.hidden", self.latent.hidden),
            ("replay_capacity", self.replay_capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.wm_lr.is_finite() && self.wm_lr > 0.0) {
            return Err(Error::Config("wm_lr must be positive".into()));
        }
        self.loss.validate()?;
        self.agent.validate()?;
        SafetyBudget::new(self.budget.limit, self.budget.lr)?;
        if !(self.budget.multiplier.is_finite() && self.budget.multiplier >= 0.0) {
            return Err(Error::Config("initial multiplier must be non-negative".into()));
        }
        let specs = self.scenario.resolve().map_err(|e| match e {
            Error::InvalidStage(_) | Error::Config(_) => Error::Config(e.to_string()),
            other => other,
        })?;
        let dims: Vec<usize> = specs.iter().map(ScenarioSpec::observation_dim).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config("scenarios disagree on observation size".into()));
        }
        Ok(())
    }

    pub fn world_model_config(&self, obs_dim: usize) -> WorldModelConfig {
        WorldModelConfig {
            deter: self.latent.deter,
            stoch: self.latent.stoch,
            hidden: self.latent.hidden,
            ..WorldModelConfig::new(obs_dim, 2)
        }
    }

    /// SHA-256 over the configuration (minus the output directory) and the
    /// resolved scenario contents, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        fingerprint_of(self, &self.scenario.resolve()?)
    }
}

pub(crate) fn fingerprint_of(cfg: &RunConfig, specs: &[ScenarioSpec]) -> Result<String> {
    let mut canon = cfg.clone();
    canon.out = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&canon)?);
    for s in specs {
        h.update(s.to_toml()?.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}
