//! Run configuration read from TOML with dotted keys, e.g.
//!
//! ```toml
//! data = "dno.csv"
//! seed = 3
//! model.rank = 1
//! model.hidden = [10]
//! train.steps = 3000
//! train.mode = "origin"
//! solver.rtol = 1e-7
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nms_core::nets::{DMode, ModelConfig};
use nms_core::odeint::Method;
use nms_core::training::{AdamaxConfig, LossKind, TrainMode};
use nms_core::{SolverConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nms,
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub rank: usize,
    pub hidden: Vec<usize>,
    /// Hidden widths of the entropy network; `hidden` when absent.
    pub hidden_s: Option<Vec<usize>>,
    pub d_mode: DMode,
    pub r_prime: Option<usize>,
    pub hamiltonian: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Nms,
            rank: 1,
            hidden: vec![10],
            hidden_s: None,
            d_mode: DMode::Cholesky,
            r_prime: None,
            hamiltonian: false,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, n: usize) -> ModelConfig {
        let mut cfg = ModelConfig::uniform(n, self.rank, &self.hidden);
        if let Some(h) = &self.hidden_s {
            cfg.hidden_s = h.clone();
        }
        cfg.d_mode = self.d_mode;
        cfg.r_prime = self.r_prime.unwrap_or(self.rank);
        cfg.hamiltonian = self.hamiltonian;
        cfg
    }

    pub fn node_widths(&self, n: usize) -> Vec<usize> {
        let mut w = vec![n];
        w.extend(&self.hidden);
        w.push(n);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub steps: usize,
    pub batch_size: usize,
    pub rollout_len: usize,
    pub max_offset: usize,
    pub lr: f64,
    pub val_every: usize,
    pub loss: LossKind,
    /// `all`, `q,p` or a list of coordinate indices.
    pub observe: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            steps: t.steps,
            batch_size: t.batch_size,
            rollout_len: t.rollout_len,
            max_offset: t.max_offset,
            lr: t.optimizer.lr,
            val_every: t.val_every,
            loss: t.loss,
            observe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt: f64,
    pub max_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            method: s.method,
            rtol: s.rtol,
            atol: s.atol,
            dt: s.dt,
            max_steps: s.max_steps,
        }
    }
}

impl SolverSection {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            method: self.method,
            dt: self.dt,
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub solver: SolverSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train.mode,
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            rollout_len: self.train.rollout_len,
            max_offset: self.train.max_offset,
            optimizer: AdamaxConfig {
                lr: self.train.lr,
                ..AdamaxConfig::default()
            },
            solver: self.solver.solver(),
            seed: self.seed,
            val_every: self.train.val_every,
            loss: self.train.loss,
        }
    }

    /// SHA-256 of the canonical JSON form, in hex. The output path is left out.
    pub fn hash(&self) -> String {
        let keyed = RunConfig { out: None, ..self.clone() };
        let json = serde_json::to_string(&keyed).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses an observation spec against a system's default mask.
pub fn parse_observe(spec: &str, n: usize, default_mask: Option<&[bool]>) -> Result<Vec<bool>> {
    match spec.trim() {
        "all" => Ok(vec![true; n]),
        "q,p" | "qp" => match default_mask {
            Some(m) if m.len() == n => Ok(m.to_vec()),
            _ => bail!("`q,p` needs a known system; list coordinate indices instead"),
        },
        list => {
            let mut mask = vec![false; n];
            for tok in list.split(',') {
                let i: usize = tok.trim().parse().with_context(|| format!("bad coordinate `{tok}`"))?;
                if i >= n {
                    bail!("coordinate {i} out of range for dimension {n}");
                }
                mask[i] = true;
            }
            Ok(mask)
        }
    }
}
