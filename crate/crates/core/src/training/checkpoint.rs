//! Serializable snapshot of a trained model.

use serde::{Deserialize, Serialize};

use crate::brackets::MetriplecticModel;
use crate::error::{Error, Result};
use crate::nets::{mlp_param_count, validate_widths, MlpParams, ModelConfig, NetKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Architecture stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Nms(ModelConfig),
    /// Unstructured MLP vector field.
    Node { widths: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParams {
    pub name: String,
    pub widths: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Optimization steps run.
    pub steps: usize,
    /// Step at which the stored parameters were selected.
    pub best_step: usize,
    pub best_val: f64,
    pub skipped_steps: u64,
    /// Hash of the run configuration, filled in by the caller.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub nets: Vec<NamedParams>,
    pub provenance: Provenance,
    /// Coordinates observed in the training data; `None` means all.
    #[serde(default)]
    pub observable: Option<Vec<bool>>,
}

impl Checkpoint {
    pub fn from_nms(model: &MetriplecticModel, provenance: Provenance) -> Self {
        let nets = NetKind::ALL
            .iter()
            .map(|&k| {
                let net = model.net(k);
                NamedParams {
                    name: k.name().to_string(),
                    widths: net.widths,
                    values: net.params,
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::Nms(model.config.clone()),
            nets,
            provenance,
            observable: None,
        }
    }

    pub fn from_node(mlp: &MlpParams, provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::Node {
                widths: mlp.widths.clone(),
            },
            nets: vec![NamedParams {
                name: "F".into(),
                widths: mlp.widths.clone(),
                values: mlp.params.clone(),
            }],
            provenance,
            observable: None,
        }
    }

    /// Checks the schema version and that every array matches the config.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let expected: Vec<(String, Vec<usize>)> = match &self.model {
            ModelSpec::Nms(cfg) => {
                cfg.validate()?;
                NetKind::ALL.iter().map(|&k| (k.name().to_string(), cfg.widths(k))).collect()
            }
            ModelSpec::Node { widths } => {
                validate_widths(widths)?;
                vec![("F".to_string(), widths.clone())]
            }
        };
        if expected.len() != self.nets.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} parameter arrays, expected {}",
                self.nets.len(),
                expected.len()
            )));
        }
        let dim = expected[0].1[0];
        if let Some(obs) = &self.observable {
            if obs.len() != dim {
                return Err(Error::Dimension {
                    what: "checkpoint observation mask",
                    expected: dim,
                    got: obs.len(),
                });
            }
        }
        for ((name, widths), net) in expected.iter().zip(&self.nets) {
            if &net.name != name || &net.widths != widths {
                return Err(Error::InvalidArgument(format!(
                    "parameter array `{}` {:?} does not match expected `{name}` {widths:?}",
                    net.name, net.widths
                )));
            }
            if net.values.len() != mlp_param_count(widths) {
                return Err(Error::Dimension {
                    what: "checkpoint parameter array",
                    expected: mlp_param_count(widths),
                    got: net.values.len(),
                });
            }
            if net.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite value in `{name}`")));
            }
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.nets.iter().flat_map(|n| n.values.iter().copied()).collect()
    }

    pub fn to_nms(&self) -> Result<MetriplecticModel> {
        self.validate()?;
        match &self.model {
            ModelSpec::Nms(cfg) => MetriplecticModel::from_params(cfg.clone(), self.flat_params()),
            ModelSpec::Node { .. } => Err(Error::InvalidArgument(
                "checkpoint holds a NODE baseline, not a metriplectic model".into(),
            )),
        }
    }

    pub fn to_node(&self) -> Result<MlpParams> {
        self.validate()?;
        match &self.model {
            ModelSpec::Node { widths } => Ok(MlpParams {
                widths: widths.clone(),
                params: self.flat_params(),
            }),
            ModelSpec::Nms(_) => Err(Error::InvalidArgument(
                "checkpoint holds a metriplectic model, not a NODE baseline".into(),
            )),
        }
    }
}
