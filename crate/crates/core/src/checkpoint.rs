//! Policy checkpoints as versioned TOML.
//!
//! Taps are stored row-major as nested arrays. Floats are written in their
//! shortest round-trip form, so a save/load cycle reproduces every bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcn::{GcnError, GcnParams, LayerSpec};
use crate::graph::{FilterTaps, GraphConfig};
use crate::reinforce::{Policy, Sensing};
use crate::world::WorldConfig;
use ndarray::Array2;

pub const CHECKPOINT_HEADER: &str = "# gpg checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("missing `{CHECKPOINT_HEADER}` header line")]
    MissingHeader,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("could not serialize checkpoint: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error(transparent)]
    Gcn(#[from] GcnError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    spec: LayerSpec,
    /// `taps[k][i][j]` is entry `(i, j)` of tap `k`.
    taps: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    log_std: [f64; 2],
    sensing: Sensing,
    graph: GraphConfig,
    layers: Vec<LayerRecord>,
    /// World the policy was trained in.
    world: WorldConfig,
}

/// A policy plus the world it was trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub world: WorldConfig,
}

impl Checkpoint {
    pub fn to_toml(&self) -> Result<String, CheckpointError> {
        let params = &self.policy.params;
        let layers = params
            .specs()
            .iter()
            .zip(params.layers())
            .map(|(spec, taps)| LayerRecord {
                spec: *spec,
                taps: taps
                    .taps()
                    .iter()
                    .map(|h| h.rows().into_iter().map(|r| r.to_vec()).collect())
                    .collect(),
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            log_std: params.log_std,
            sensing: self.policy.sensing,
            graph: self.policy.graph,
            layers,
            world: self.world.clone(),
        };
        Ok(format!(
            "{CHECKPOINT_HEADER} v{CHECKPOINT_VERSION}\n{}",
            toml::to_string(&file)?
        ))
    }

    pub fn from_toml(text: &str) -> Result<Self, CheckpointError> {
        if !text.starts_with(CHECKPOINT_HEADER) {
            return Err(CheckpointError::MissingHeader);
        }
        let file: CheckpointFile = toml::from_str(text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(file.version));
        }
        let mut specs = Vec::with_capacity(file.layers.len());
        let mut taps = Vec::with_capacity(file.layers.len());
        for (layer, rec) in file.layers.into_iter().enumerate() {
            let shape_err = |reason: String| CheckpointError::Shape { layer, reason };
            if rec.taps.len() != rec.spec.order + 1 {
                return Err(shape_err(format!(
                    "expected {} taps, found {}",
                    rec.spec.order + 1,
                    rec.taps.len()
                )));
            }
            let mut mats = Vec::with_capacity(rec.taps.len());
            for rows in rec.taps {
                let (f_in, f_out) = (rec.spec.f_in, rec.spec.f_out);
                if rows.len() != f_in || rows.iter().any(|r| r.len() != f_out) {
                    return Err(shape_err(format!("every tap must be {f_in}x{f_out}")));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                mats.push(
                    Array2::from_shape_vec((f_in, f_out), flat)
                        .map_err(|e| shape_err(e.to_string()))?,
                );
            }
            specs.push(rec.spec);
            taps.push(FilterTaps::new(mats).map_err(|e| shape_err(e.to_string()))?);
        }
        let params = GcnParams::from_layers(specs, taps, file.log_std)?;
        Ok(Self {
            policy: Policy {
                params,
                graph: file.graph,
                sensing: file.sensing,
            },
            world: file.world,
        })
    }
}
