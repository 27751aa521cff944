//! Run manifest (`manifest.toml`): everything needed to reload a composed
//! model and to account for how it was trained.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockPartition, TrainConfig, TrainMode};
use crate::net::MlpSpec;
use crate::schedule::{GaussianOracle, Schedule};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Checkpoint file name, relative to the manifest's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub seed: u64,
    pub updates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    pub wall_seconds: f64,
    pub status: BlockStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<MlpSpec>,
    /// Closed-form score in place of a trained network.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<GaussianOracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub mode: TrainMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub t_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub workers: usize,
    /// Wall time of the whole run (all blocks, as scheduled).
    pub wall_seconds: f64,
    pub schedule: Schedule,
    pub partition: BlockPartition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub blocks: Vec<BlockEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            mode: TrainMode::Sa,
            label: None,
            t_floor: 1e-5,
            dataset: None,
            workers: 1,
            wall_seconds: 0.0,
            schedule: Schedule::default(),
            partition: BlockPartition::single(),
            train: None,
            blocks: Vec::new(),
        }
    }
}

impl Manifest {
    /// A one-block manifest whose score is the diffused `oracle`.
    pub fn analytic(schedule: Schedule, oracle: GaussianOracle, t_floor: f64) -> Self {
        Manifest {
            label: Some("analytic".into()),
            t_floor,
            schedule,
            blocks: vec![BlockEntry {
                index: 0,
                t_start: 0.0,
                t_end: 1.0,
                checkpoint: None,
                seed: 0,
                updates: 0,
                initial_loss: None,
                final_loss: None,
                wall_seconds: 0.0,
                status: BlockStatus::Ok,
                error: None,
                spec: None,
                analytic: Some(oracle),
            }],
            ..Manifest::default()
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.format_version != MANIFEST_VERSION {
            return Err(format!("unsupported format_version {}", self.format_version));
        }
        BlockPartition::new(self.partition.kind, self.partition.boundaries.clone())
            .map_err(|e| e.to_string())?;
        if self.blocks.len() != self.partition.num_blocks() {
            return Err(format!(
                "{} blocks listed for a {}-block partition",
                self.blocks.len(),
                self.partition.num_blocks()
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.index != i {
                return Err(format!("block {i} listed with index {}", b.index));
            }
            if b.t_start != self.partition.boundaries[i] || b.t_end != self.partition.boundaries[i + 1] {
                return Err(format!("block {i} time range disagrees with the partition"));
            }
        }
        if !(self.t_floor > 0.0 && self.t_floor < 1.0) {
            return Err(format!("t_floor {} outside (0, 1)", self.t_floor));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let m: Manifest = toml::from_str(text).map_err(|e| e.to_string())?;
        m.validate()?;
        Ok(m)
    }

    /// Writes `dir/manifest.toml`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    /// Reads a manifest from a file, or from `manifest.toml` inside a directory.
    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text).map_err(|r| Error::format(&path, r))
    }

    pub fn all_ok(&self) -> bool {
        self.blocks.iter().all(|b| b.status == BlockStatus::Ok)
    }

    /// Slowest block: the wall time of a fully parallel run.
    pub fn max_block_seconds(&self) -> f64 {
        self.blocks.iter().map(|b| b.wall_seconds).fold(0.0, f64::max)
    }

    /// Total compute across blocks.
    pub fn sum_block_seconds(&self) -> f64 {
        self.blocks.iter().map(|b| b.wall_seconds).sum()
    }

    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            format!("{}:{}", self.mode.label(), self.partition.num_blocks())
        })
    }
}
