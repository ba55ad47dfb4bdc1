//! Versioned checkpoint files.
//!
//! Layout: a UTF-8 text header terminated by the line `end-header`, then a
//! little-endian binary body.
//!
//! ```text
//! LATENTDRIVE-CHECKPOINT
//! version 1
//! seed <u64>
//! fingerprint <hex>
//! meta <key> <single-line value>      (zero or more)
//! groups <count>
//! end-header
//! ```
//!
//! Body, per group: `u32` name length, name bytes, `u32` parameter count;
//! per parameter: `u32` name length, name bytes, `u32` rank, `u64` per
//! dimension, `u64` optimizer step count, then the values, first moments and
//! second moments as `f64` little-endian.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{Error, Parameter, ParameterSet, Result, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "LATENTDRIVE-CHECKPOINT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub seed: u64,
    pub fingerprint: String,
    pub meta: BTreeMap<String, String>,
    pub groups: BTreeMap<String, ParameterSet<S>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(seed: u64, fingerprint: impl Into<String>) -> Self {
        Self {
            seed,
            fingerprint: fingerprint.into(),
            meta: BTreeMap::new(),
            groups: BTreeMap::new(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "version {CHECKPOINT_VERSION}")?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "fingerprint {}", self.fingerprint)?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(bad(format!("meta entry `{k}` must be single-line")));
            }
            writeln!(w, "meta {k} {v}")?;
        }
        writeln!(w, "groups {}", self.groups.len())?;
        writeln!(w, "end-header")?;

        for (group, set) in &self.groups {
            write_str(w, group)?;
            w.write_all(&(set.len() as u32).to_le_bytes())?;
            for (name, p) in set.iter() {
                write_str(w, name)?;
                let shape = p.value.shape();
                w.write_all(&(shape.len() as u32).to_le_bytes())?;
                for &d in shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                w.write_all(&p.steps.to_le_bytes())?;
                for t in [p.value.as_ref(), &p.first_moment, &p.second_moment] {
                    for &x in t.data() {
                        w.write_all(&x.to_f64_lossy().to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("unexpected end of header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version: u32 = field(&next_line(&mut r)?, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let seed: u64 = field(&next_line(&mut r)?, "seed")?;
        let fingerprint: String = field(&next_line(&mut r)?, "fingerprint")?;
        let mut meta = BTreeMap::new();
        let group_count: usize = loop {
            let l = next_line(&mut r)?;
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else {
                break field(&l, "groups")?;
            }
        };
        if next_line(&mut r)? != "end-header" {
            return Err(bad("missing end-header"));
        }

        let mut groups = BTreeMap::new();
        for _ in 0..group_count {
            let group = read_str(&mut r)?;
            let count = read_u32(&mut r)? as usize;
            let mut set = ParameterSet::new();
            for _ in 0..count {
                let name = read_str(&mut r)?;
                let rank = read_u32(&mut r)? as usize;
                let shape = (0..rank)
                    .map(|_| read_u64(&mut r).map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let steps = read_u64(&mut r)?;
                let n: usize = shape.iter().product();
                let mut read_tensor = || -> Result<Tensor<S>> {
                    let data = (0..n)
                        .map(|_| read_f64(&mut r).map(S::of))
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::new(shape.clone(), data)
                };
                let value = read_tensor()?;
                let first_moment = read_tensor()?;
                let second_moment = read_tensor()?;
                set.insert_parameter(
                    name,
                    Parameter {
                        value: Arc::new(value),
                        first_moment,
                        second_moment,
                        steps,
                    },
                )?;
            }
            groups.insert(group, set);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after last group"));
        }
        Ok(Self {
            seed,
            fingerprint,
            meta,
            groups,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }

    pub fn group(&self, name: &str) -> Result<&ParameterSet<S>> {
        self.groups
            .get(name)
            .ok_or_else(|| bad(format!("missing parameter group `{name}`")))
    }
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("expected `{key} <value>`, got `{line}`")))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| bad("truncated checkpoint body"))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(bad("implausible name length"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| bad("truncated checkpoint body"))?;
    String::from_utf8(buf).map_err(|_| bad("name is not UTF-8"))
}
