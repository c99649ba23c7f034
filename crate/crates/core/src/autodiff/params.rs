//! Named parameter storage shared by all models: initialization, Adam
//! updates, snapshots, and checkpoint serialization.
//!
//! Checkpoint layout: magic `RBCKPT1\n`, u64 entry count, then per
//! entry: name (length-prefixed UTF-8), rank u32, dims u64…, values as
//! f64 little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::RngExt;
use sha2::{Digest, Sha256};

use super::{AdError, Tape, Var};
use crate::binio::*;
use crate::stream;

const CKPT_MAGIC: &[u8] = b"RBCKPT1\n";
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in ±sqrt(6/(fan_in+fan_out)).
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    regularized: bool,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

/// All learned tensors of one model instance.
///
/// Initialization draws an independent seeded stream per parameter
/// name, so two models sharing parameter names (and a seed) start from
/// identical values regardless of what else they allocate.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    adam_step: u64,
}

/// Tape handles for every parameter of a store, in declaration order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        regularized: bool,
        seed: u64,
    ) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream(seed, &format!("init:{name}"));
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Uniform { lo, hi } => {
                let mut rng = stream(seed, &format!("init:{name}"));
                (0..n).map(|_| rng.random_range(lo..hi)).collect()
            }
        };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            regularized,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Inserts every parameter as a tracked leaf on the tape.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|e| tape.param_from_slice(&e.shape, &e.value))
                .collect(),
        }
    }

    /// `Σ ‖θ‖²` over the parameters marked as regularized, or `None`
    /// when the model has none (the bias-only model).
    pub fn l2_penalty(&self, tape: &mut Tape, bound: &BoundParams) -> Option<Var> {
        let mut acc: Option<Var> = None;
        for (idx, entry) in self.entries.iter().enumerate() {
            if !entry.regularized {
                continue;
            }
            let sq = tape.sum_squares(bound.vars[idx]);
            acc = Some(match acc {
                None => sq,
                Some(prev) => tape.add(prev, sq).expect("scalar add"),
            });
        }
        acc
    }

    /// One Adam update from the gradients accumulated on `tape`.
    /// Parameters whose gradient is absent are treated as zero-grad.
    pub fn adam_step(&mut self, tape: &Tape, bound: &BoundParams, lr: f64) {
        self.adam_step += 1;
        let t = self.adam_step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (idx, entry) in self.entries.iter_mut().enumerate() {
            let grad = tape.grad(bound.vars[idx]);
            for i in 0..entry.value.len() {
                let g = grad.map_or(0.0, |g| g[i]);
                entry.adam_m[i] = ADAM_BETA1 * entry.adam_m[i] + (1.0 - ADAM_BETA1) * g;
                entry.adam_v[i] = ADAM_BETA2 * entry.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = entry.adam_m[i] / bc1;
                let v_hat = entry.adam_v[i] / bc2;
                entry.value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (entry, values) in self.entries.iter_mut().zip(snapshot) {
            entry.value.clone_from(values);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.value.iter().all(|v| v.is_finite()))
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.name.as_bytes());
            for v in &e.value {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<(), AdError> {
        let io_err = |source| AdError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        (|| -> std::io::Result<()> {
            w.write_all(CKPT_MAGIC)?;
            write_u64(&mut w, self.entries.len() as u64)?;
            for e in &self.entries {
                write_str(&mut w, &e.name)?;
                write_u32(&mut w, e.shape.len() as u32)?;
                for &d in &e.shape {
                    write_u64(&mut w, d as u64)?;
                }
                for &v in &e.value {
                    write_f64(&mut w, v)?;
                }
            }
            w.flush()
        })()
        .map_err(io_err)
    }

    /// Loads values from a checkpoint into matching parameter names;
    /// every entry must exist with an identical shape.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), AdError> {
        let mut r = BufReader::new(File::open(path).map_err(|source| AdError::Io {
            path: path.display().to_string(),
            source,
        })?);
        let corrupt = |reason: String| AdError::Corrupt {
            path: path.display().to_string(),
            reason,
        };
        let inner = (|| -> std::io::Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
            expect_magic(&mut r, CKPT_MAGIC)?;
            let n = read_u64(&mut r)? as usize;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let name = read_str(&mut r)?;
                let rank = read_u32(&mut r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u64(&mut r)? as usize);
                }
                let count: usize = shape.iter().product();
                let mut value = Vec::with_capacity(count);
                for _ in 0..count {
                    value.push(read_f64(&mut r)?);
                }
                out.push((name, shape, value));
            }
            Ok(out)
        })()
        .map_err(|e| corrupt(e.to_string()))?;

        if inner.len() != self.entries.len() {
            return Err(corrupt(format!(
                "checkpoint has {} parameters, model has {}",
                inner.len(),
                self.entries.len()
            )));
        }
        for (name, shape, value) in inner {
            let id = self
                .id(&name)
                .ok_or_else(|| corrupt(format!("unknown parameter {name}")))?;
            if self.entries[id.0].shape != shape {
                return Err(corrupt(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    shape, self.entries[id.0].shape
                )));
            }
            self.entries[id.0].value = value;
        }
        Ok(())
    }
}
