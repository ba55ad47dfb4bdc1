//! Episode-structured experience store.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::world_model::SequenceBatch;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// One step in arrival form: the observation reached, the action that led
/// to it (zeros at an episode start), and the reward and cost received on
/// arrival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub terminated: bool,
    pub intervened: bool,
}

impl Transition {
    /// Whether the latent trajectory carries on past this step.
    pub fn continues(&self) -> bool {
        !(self.terminated || self.intervened)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub steps: Vec<Transition>,
    pub closed: bool,
}

/// Start of a sampled segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub episode: u64,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch<S> {
    pub batch: SequenceBatch<S>,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    episodes: VecDeque<Episode>,
    stored: usize,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 || action_dim == 0 {
            return Err(Error::Config("replay capacity and dimensions must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            episodes: VecDeque::new(),
            stored: 0,
            next_id: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stored
    }

    pub fn is_empty(&self) -> bool {
        self.stored == 0
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        if t.observation.len() != self.obs_dim {
            return Err(Error::InvalidTransition(format!(
                "observation has {} entries, expected {}",
                t.observation.len(),
                self.obs_dim
            )));
        }
        if t.action.len() != self.action_dim {
            return Err(Error::InvalidTransition(format!(
                "action has {} entries, expected {}",
                t.action.len(),
                self.action_dim
            )));
        }
        if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::InvalidTransition(format!("action {:?} outside [-1, 1]", t.action)));
        }
        if t.cost != 0.0 && t.cost != 1.0 {
            return Err(Error::InvalidTransition(format!("cost {} is not 0 or 1", t.cost)));
        }
        if !t.reward.is_finite() || t.observation.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidTransition("non-finite value".into()));
        }
        Ok(())
    }

    /// Adds `t` to the open episode, starting one if needed. A terminal or
    /// intervention flag closes the episode. Oldest whole episodes are
    /// evicted until the stored count fits the capacity.
    pub fn append(&mut self, t: Transition) -> Result<()> {
        self.validate(&t)?;
        let closes = !t.continues();
        match self.episodes.back_mut() {
            Some(ep) if !ep.closed => ep.steps.push(t),
            _ => {
                self.episodes.push_back(Episode {
                    id: self.next_id,
                    steps: vec![t],
                    closed: false,
                });
                self.next_id += 1;
            }
        }
        if closes {
            self.close_episode();
        }
        self.stored += 1;
        while self.stored > self.capacity {
            let old = self.episodes.pop_front().expect("stored > 0 implies an episode");
            self.stored -= old.steps.len();
        }
        Ok(())
    }

    /// Closes the open episode without a terminal flag (time-limit
    /// truncation). No-op when nothing is open.
    pub fn close_episode(&mut self) {
        if let Some(ep) = self.episodes.back_mut() {
            ep.closed = true;
        }
    }

    /// Number of valid `(episode, offset)` starts for length-`t` segments.
    pub fn segment_count(&self, t: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| (e.steps.len() + 1).saturating_sub(t))
            .sum()
    }

    fn locate(&self, mut index: usize, t: usize) -> (&Episode, usize) {
        for ep in &self.episodes {
            let n = (ep.steps.len() + 1).saturating_sub(t);
            if index < n {
                return (ep, index);
            }
            index -= n;
        }
        unreachable!("index below segment_count")
    }

    /// Draws `b` segments of `t` consecutive steps, uniformly over all valid
    /// starts. Segments never cross episode boundaries.
    pub fn sample_sequences<S: Scalar>(&self, b: usize, t: usize, rng: &mut impl Rng) -> Result<SampledBatch<S>> {
        if b == 0 || t == 0 {
            return Err(Error::Config("batch size and sequence length must be positive".into()));
        }
        let total = self.segment_count(t);
        if total == 0 {
            return Err(Error::NoLongEpisode { required: t });
        }
        let picks: Vec<(&Episode, usize)> = (0..b).map(|_| self.locate(rng.random_range(0..total), t)).collect();
        let column = |f: &dyn Fn(&Transition) -> Vec<f64>, width: usize| -> Vec<Tensor<S>> {
            (0..t)
                .map(|k| {
                    let data = picks
                        .iter()
                        .flat_map(|(ep, off)| f(&ep.steps[off + k]))
                        .map(S::of)
                        .collect();
                    Tensor::new(vec![b, width], data).expect("positive dims")
                })
                .collect()
        };
        let batch = SequenceBatch {
            observations: column(&|s| s.observation.clone(), self.obs_dim),
            actions: column(&|s| s.action.clone(), self.action_dim),
            rewards: column(&|s| vec![s.reward], 1),
            costs: column(&|s| vec![s.cost], 1),
            continues: column(&|s| vec![if s.continues() { 1.0 } else { 0.0 }], 1),
        };
        let segments = picks
            .iter()
            .map(|(ep, off)| Segment {
                episode: ep.id,
                offset: *off,
            })
            .collect();
        Ok(SampledBatch { batch, segments })
    }

    /// [`sample_sequences`](Self::sample_sequences) with a fresh generator
    /// seeded from `seed`.
    pub fn sample_seeded<S: Scalar>(&self, b: usize, t: usize, seed: u64) -> Result<SampledBatch<S>> {
        self.sample_sequences(b, t, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Rebuilds a buffer from stored episodes, all marked closed.
    pub fn from_episodes(
        capacity: usize,
        obs_dim: usize,
        action_dim: usize,
        episodes: Vec<Vec<Transition>>,
    ) -> Result<Self> {
        let mut buf = Self::new(capacity, obs_dim, action_dim)?;
        for ep in episodes {
            for t in ep {
                buf.append(t)?;
            }
            buf.close_episode();
        }
        Ok(buf)
    }
}

const LOG_MAGIC: &str = "LATENTDRIVE-REPLAY";
const LOG_VERSION: u32 = 1;

/// Appends one episode to a replay log, writing the header when the file
/// is new. Values use the little-endian `f64` encoding of checkpoints.
pub fn append_episode_log(path: &Path, obs_dim: usize, action_dim: usize, episode: &[Transition]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        let (o, a) = read_log_header(&mut BufReader::new(File::open(path)?), path)?;
        if (o, a) != (obs_dim, action_dim) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("log holds {o}/{a}-dimensional steps, not {obs_dim}/{action_dim}"),
            });
        }
    }
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(w, "{LOG_MAGIC}")?;
        writeln!(w, "version {LOG_VERSION}")?;
        writeln!(w, "dims {obs_dim} {action_dim}")?;
        writeln!(w, "end-header")?;
    }
    w.write_all(&(episode.len() as u64).to_le_bytes())?;
    for t in episode {
        if t.observation.len() != obs_dim || t.action.len() != action_dim {
            return Err(Error::InvalidTransition("dimension differs from the log".into()));
        }
        for &x in t.observation.iter().chain(&t.action).chain([&t.reward, &t.cost]) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[u8::from(t.terminated) | (u8::from(t.intervened) << 1)])?;
    }
    w.flush()?;
    Ok(())
}

fn read_log_header(r: &mut impl BufRead, path: &Path) -> Result<(usize, usize)> {
    let bad = |detail: String| Error::Parse {
        path: path.to_path_buf(),
        detail,
    };
    let mut line = String::new();
    let mut next = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        Ok(line.trim_end().to_string())
    };
    if next(r)? != LOG_MAGIC {
        return Err(bad("not a replay log".into()));
    }
    if next(r)? != format!("version {LOG_VERSION}") {
        return Err(bad("unsupported replay log version".into()));
    }
    let dims = next(r)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let (o, a) = match parts.as_slice() {
        ["dims", o, a] => (
            o.parse().map_err(|_| bad(format!("bad dims line `{dims}`")))?,
            a.parse().map_err(|_| bad(format!("bad dims line `{dims}`")))?,
        ),
        _ => return Err(bad(format!("bad dims line `{dims}`"))),
    };
    if next(r)? != "end-header" {
        return Err(bad("missing end-header".into()));
    }
    Ok((o, a))
}

/// Reads every episode in a replay log, returning the dimensions too.
pub fn read_episode_log(path: &Path) -> Result<(usize, usize, Vec<Vec<Transition>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let (obs_dim, action_dim) = read_log_header(&mut r, path)?;
    let truncated = || Error::Parse {
        path: path.to_path_buf(),
        detail: "truncated episode record".into(),
    };
    let mut episodes = Vec::new();
    loop {
        let mut len = [0u8; 8];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => r.read_exact(&mut len[1..]).map_err(|_| truncated())?,
        }
        let n = u64::from_le_bytes(len) as usize;
        let mut ep = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut vals = vec![0.0; obs_dim + action_dim + 2];
            for v in vals.iter_mut() {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| truncated())?;
                *v = f64::from_le_bytes(b);
            }
            let mut flags = [0u8; 1];
            r.read_exact(&mut flags).map_err(|_| truncated())?;
            let cost = vals.pop().expect("sized");
            let reward = vals.pop().expect("sized");
            let action = vals.split_off(obs_dim);
            ep.push(Transition {
                observation: vals,
                action,
                reward,
                cost,
                terminated: flags[0] & 1 != 0,
                intervened: flags[0] & 2 != 0,
            });
        }
        episodes.push(ep);
    }
    Ok((obs_dim, action_dim, episodes))
}
