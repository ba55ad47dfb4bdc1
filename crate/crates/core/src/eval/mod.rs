//! Driving metrics, comparison tables and training curves.
//!
//! MPI is aggregate distance over aggregate interventions, SR is the
//! fraction of episodes that reach the goal untouched, and Std[V] is the
//! population deviation of every recorded speed pooled across episodes.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{read_trajectory, StepRecord};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub dt: f64,
    pub steps: Vec<StepRecord>,
    /// Sum of per-step displacements (m).
    pub distance: f64,
    /// Reached the goal.
    pub completed: bool,
}

const TIME_TOL: f64 = 1e-9;

impl EpisodeLog {
    pub fn new(dt: f64, steps: Vec<StepRecord>, completed: bool) -> Result<Self> {
        let distance = steps.iter().map(StepRecord::distance).sum();
        let log = Self {
            dt,
            steps,
            distance,
            completed,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn from_trajectory(path: &Path, dt: f64, completed: bool) -> Result<Self> {
        Self::new(dt, read_trajectory(path)?, completed)
    }

    /// Times advance by exactly `dt` from `dt`, and the stored distance
    /// agrees with the positions.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("episode dt {} must be positive", self.dt)));
        }
        let mut prev = 0.0;
        for (k, s) in self.steps.iter().enumerate() {
            if (s.time - prev - self.dt).abs() > TIME_TOL {
                return Err(Error::Config(format!(
                    "step {k} at t={} does not follow t={prev} by dt={}",
                    s.time, self.dt
                )));
            }
            prev = s.time;
        }
        let d: f64 = self.steps.iter().map(StepRecord::distance).sum();
        if (d - self.distance).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "episode distance {} disagrees with positions ({d})",
                self.distance
            )));
        }
        Ok(())
    }

    pub fn interventions(&self) -> usize {
        self.steps.iter().filter(|s| s.intervened).count()
    }

    pub fn duration(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time)
    }

    /// Reached the goal with no intervention.
    pub fn clean(&self) -> bool {
        self.completed && self.interventions() == 0
    }

    /// Distance driven before the first intervention.
    pub fn clean_distance(&self) -> f64 {
        let mut d = 0.0;
        for s in &self.steps {
            d += s.distance();
            if s.intervened {
                break;
            }
        }
        d
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_cost(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.cost + gamma * acc)
    }
}

fn non_empty(logs: &[EpisodeLog]) -> Result<()> {
    if logs.is_empty() {
        Err(Error::Empty("episode logs"))
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mpi {
    pub meters: f64,
    /// No intervention happened, so `meters` is the total distance and only
    /// bounds the true value from below.
    pub lower_bound: bool,
}

pub fn compute_mpi(logs: &[EpisodeLog]) -> Result<Mpi> {
    non_empty(logs)?;
    let distance: f64 = logs.iter().map(|l| l.distance).sum();
    let interventions: usize = logs.iter().map(EpisodeLog::interventions).sum();
    Ok(if interventions == 0 {
        Mpi {
            meters: distance,
            lower_bound: true,
        }
    } else {
        Mpi {
            meters: distance / interventions as f64,
            lower_bound: false,
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TravelTime {
    /// Mean time of completed episodes, absent when none completed.
    pub seconds: Option<f64>,
    pub completed: usize,
    /// Episodes that did not finish.
    pub dnf: usize,
}

impl TravelTime {
    pub fn reason(&self) -> Option<&'static str> {
        self.seconds.is_none().then_some("no episode reached the goal")
    }
}

pub fn compute_tt(logs: &[EpisodeLog]) -> TravelTime {
    let done: Vec<f64> = logs.iter().filter(|l| l.completed).map(EpisodeLog::duration).collect();
    TravelTime {
        seconds: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
        completed: done.len(),
        dnf: logs.len() - done.len(),
    }
}

/// Percentage of episodes completed without any intervention.
pub fn compute_sr(logs: &[EpisodeLog]) -> Result<f64> {
    non_empty(logs)?;
    let clean = logs.iter().filter(|l| l.clean()).count();
    Ok(100.0 * clean as f64 / logs.len() as f64)
}

/// Percentage of driven distance covered before each episode's first
/// intervention. Zero distance reads as fully clean.
pub fn compute_sr_distance(logs: &[EpisodeLog]) -> Result<f64> {
    non_empty(logs)?;
    let total: f64 = logs.iter().map(|l| l.distance).sum();
    if total == 0.0 {
        return Ok(100.0);
    }
    Ok(100.0 * logs.iter().map(EpisodeLog::clean_distance).sum::<f64>() / total)
}

/// Population standard deviation of all step speeds.
pub fn compute_std_v(logs: &[EpisodeLog]) -> Result<f64> {
    let speeds = || logs.iter().flat_map(|l| l.steps.iter().map(|s| s.speed));
    let n = speeds().count();
    if n < 2 {
        return Err(Error::Empty("speed samples (need at least 2)"));
    }
    let mean = speeds().sum::<f64>() / n as f64;
    let var = speeds().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok(var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpi: f64,
    pub mpi_lower_bound: bool,
    pub tt: Option<f64>,
    pub dnf: usize,
    pub sr: f64,
    pub sr_distance: f64,
    pub std_v: f64,
    pub episodes: usize,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn from_logs(logs: &[EpisodeLog], fingerprint: &str) -> Result<Self> {
        let mpi = compute_mpi(logs)?;
        let tt = compute_tt(logs);
        Ok(Self {
            mpi: mpi.meters,
            mpi_lower_bound: mpi.lower_bound,
            tt: tt.seconds,
            dnf: tt.dnf,
            sr: compute_sr(logs)?,
            sr_distance: compute_sr_distance(logs)?,
            std_v: compute_std_v(logs)?,
            episodes: logs.len(),
            fingerprint: fingerprint.to_owned(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Mpi,
    Tt,
    Sr,
    StdV,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mpi, Metric::Tt, Metric::Sr, Metric::StdV];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Mpi => "MPI (m)",
            Metric::Tt => "TT (s)",
            Metric::Sr => "SR (%)",
            Metric::StdV => "Std[V] (m/s)",
        }
    }

    /// `Less` when `a` is better. A missing travel time loses to any value.
    pub fn compare(self, a: &MetricsReport, b: &MetricsReport) -> Ordering {
        match self {
            Metric::Mpi => b.mpi.total_cmp(&a.mpi),
            Metric::Sr => b.sr.total_cmp(&a.sr),
            Metric::StdV => a.std_v.total_cmp(&b.std_v),
            Metric::Tt => match (a.tt, b.tt) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            },
        }
    }

    fn cell(self, r: &MetricsReport) -> String {
        match self {
            Metric::Mpi => format!("{}{}", if r.mpi_lower_bound { ">=" } else { "" }, r.mpi),
            Metric::Tt => r.tt.map_or_else(|| "n/a".to_owned(), |t| t.to_string()),
            Metric::Sr => r.sr.to_string(),
            Metric::StdV => r.std_v.to_string(),
        }
    }
}

/// Row names ordered best-first on one metric, ties broken by name.
pub fn order_by(metric: Metric, rows: &[(String, MetricsReport)]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&i, &j| metric.compare(&rows[i].1, &rows[j].1).then_with(|| rows[i].0.cmp(&rows[j].0)));
    idx.into_iter().map(|i| rows[i].0.clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<(String, MetricsReport)>,
    /// Best rows per metric, in [`Metric::ALL`] order. More than one name
    /// means a tie.
    pub winners: Vec<(Metric, Vec<String>)>,
    /// Most metric wins first, then by name.
    pub ranking: Vec<String>,
}

impl Comparison {
    pub fn winners_of(&self, metric: Metric) -> &[String] {
        self.winners
            .iter()
            .find(|(m, _)| *m == metric)
            .map(|(_, w)| w.as_slice())
            .unwrap_or(&[])
    }

    pub fn wins(&self, name: &str) -> usize {
        self.winners.iter().filter(|(_, w)| w.iter().any(|n| n == name)).count()
    }

    /// Plain-text table; `*` marks a (possibly shared) best value.
    pub fn render(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("Method".to_owned())
            .chain(Metric::ALL.iter().map(|m| m.label().to_owned()))
            .collect()];
        for (name, r) in &self.rows {
            let mut row = vec![name.clone()];
            for m in Metric::ALL {
                let star = if self.winners_of(m).contains(name) { "*" } else { "" };
                row.push(format!("{}{star}", m.cell(r)));
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        let _ = writeln!(out, "\nRanking: {}", self.ranking.join(" > "));
        out
    }
}

pub fn comparison_report(rows: &[(String, MetricsReport)]) -> Result<Comparison> {
    if rows.len() < 2 {
        return Err(Error::Empty("comparison rows (need at least 2)"));
    }
    let winners: Vec<(Metric, Vec<String>)> = Metric::ALL
        .iter()
        .map(|&m| {
            let best = rows
                .iter()
                .map(|(_, r)| r)
                .min_by(|a, b| m.compare(a, b))
                .expect("non-empty");
            let mut names: Vec<String> = rows
                .iter()
                .filter(|(_, r)| m.compare(r, best) == Ordering::Equal)
                .map(|(n, _)| n.clone())
                .collect();
            names.sort();
            (m, names)
        })
        .collect();
    let mut cmp = Comparison {
        rows: rows.to_vec(),
        winners,
        ranking: Vec::new(),
    };
    let mut ranking: Vec<String> = rows.iter().map(|(n, _)| n.clone()).collect();
    ranking.sort_by(|a, b| cmp.wins(b).cmp(&cmp.wins(a)).then_with(|| a.cmp(b)));
    cmp.ranking = ranking;
    Ok(cmp)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    name: String,
    mpi: f64,
    mpi_lower_bound: bool,
    tt: Option<f64>,
    dnf: usize,
    sr: f64,
    sr_distance: f64,
    std_v: f64,
    episodes: usize,
    fingerprint: String,
}

pub fn write_csv(rows: &[(String, MetricsReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (name, r) in rows {
        w.serialize(CsvRow {
            name: name.clone(),
            mpi: r.mpi,
            mpi_lower_bound: r.mpi_lower_bound,
            tt: r.tt,
            dnf: r.dnf,
            sr: r.sr,
            sr_distance: r.sr_distance,
            std_v: r.std_v,
            episodes: r.episodes,
            fingerprint: r.fingerprint.clone(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses [`write_csv`] output. `origin` names the source in errors.
pub fn read_csv(text: &str, origin: &Path) -> Result<Vec<(String, MetricsReport)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                detail: e.to_string(),
            })?;
            Ok((
                row.name,
                MetricsReport {
                    mpi: row.mpi,
                    mpi_lower_bound: row.mpi_lower_bound,
                    tt: row.tt,
                    dnf: row.dnf,
                    sr: row.sr,
                    sr_distance: row.sr_distance,
                    std_v: row.std_v,
                    episodes: row.episodes,
                    fingerprint: row.fingerprint,
                },
            ))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub average_return: f64,
}

pub const CURVE_WINDOW: usize = 10;

/// Trailing mean of episode returns over `window` episodes, one point per
/// episode once the window is full. Runs shorter than the window yield a
/// single point over everything seen.
pub fn reward_curve(episodes: &[(u64, f64)], window: usize) -> Vec<CurvePoint> {
    let window = window.max(1);
    if episodes.is_empty() {
        return Vec::new();
    }
    if episodes.len() < window {
        let (steps, _) = *episodes.last().unwrap();
        return vec![CurvePoint {
            env_steps: steps,
            average_return: episodes.iter().map(|e| e.1).sum::<f64>() / episodes.len() as f64,
        }];
    }
    episodes
        .windows(window)
        .map(|w| CurvePoint {
            env_steps: w[window - 1].0,
            average_return: w.iter().map(|e| e.1).sum::<f64>() / window as f64,
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| Error::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
