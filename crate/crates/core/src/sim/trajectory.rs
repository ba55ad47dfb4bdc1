//! JSON-lines trajectory export, one step per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Simulated time at the end of the step (s).
    pub time: f64,
    /// Position before the step.
    pub from: [f64; 2],
    /// Position after the step.
    pub position: [f64; 2],
    pub speed: f64,
    pub action: [f64; 2],
    pub reward: f64,
    pub cost: f64,
    /// The oracle fired after this step and the vehicle was reset.
    pub intervened: bool,
}

impl StepRecord {
    pub fn distance(&self) -> f64 {
        (self.position[0] - self.from[0]).hypot(self.position[1] - self.from[1])
    }
}

pub fn write_trajectory(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for step in steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StepRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut steps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(steps)
}
