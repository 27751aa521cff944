//! Run configuration: a TOML file whose keys are mirrored one-to-one by
//! `psm train` flags. Flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use psm::net::MlpSpec;
use psm::schedule::Schedule;
use psm::train::{BlockPartition, PartitionKind, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::invalid;

pub const RUN_CONFIG_FILE: &str = "run.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TrainMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// Either explicit `boundaries` or a number of equal `blocks`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updates_per_block: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_floor: Option<f64>,
}

/// Everything `psm train` needs, with defaults filled in.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub mode: TrainMode,
    pub label: Option<String>,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub partition: BlockPartition,
    pub spec: MlpSpec,
    pub train: TrainConfig,
}

fn or<T>(a: Option<T>, b: Option<T>) -> Option<T> {
    a.or(b)
}

impl RunConfig {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `self` with every field set in `over` replaced.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        RunConfig {
            mode: or(over.mode, self.mode),
            label: or(over.label, self.label),
            dataset: or(over.dataset, self.dataset),
            out_dir: or(over.out_dir, self.out_dir),
            workers: or(over.workers, self.workers),
            schedule: ScheduleSection {
                c: or(over.schedule.c, self.schedule.c),
            },
            partition: match (&over.partition.boundaries, over.partition.blocks) {
                (None, None) => self.partition,
                _ => over.partition,
            },
            model: ModelSection {
                hidden: or(over.model.hidden, self.model.hidden),
            },
            train: TrainSection {
                batch_size: or(over.train.batch_size, self.train.batch_size),
                lr: or(over.train.lr, self.train.lr),
                updates_per_block: or(over.train.updates_per_block, self.train.updates_per_block),
                seed: or(over.train.seed, self.train.seed),
                t_floor: or(over.train.t_floor, self.train.t_floor),
            },
        }
    }

    /// Fills defaults and validates. `default_workers` applies when neither
    /// the file nor a flag sets `workers`.
    pub fn resolve(&self, default_workers: usize) -> anyhow::Result<(ResolvedRun, RunConfig)> {
        let mode = self.mode.ok_or_else(|| invalid("mode", "not set (sa, tpsm or dpsm)"))?;
        let dataset = self.dataset.clone().ok_or_else(|| invalid("dataset", "not set"))?;
        let out_dir = self.out_dir.clone().ok_or_else(|| invalid("out_dir", "not set"))?;
        let workers = self.workers.unwrap_or(default_workers);
        if workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        let defaults = TrainConfig::default();
        let schedule = Schedule::linear(self.schedule.c.unwrap_or(defaults.schedule.c))?;
        let train = TrainConfig {
            batch_size: self.train.batch_size.unwrap_or(defaults.batch_size),
            lr: self.train.lr.unwrap_or(defaults.lr),
            updates_per_block: self.train.updates_per_block.unwrap_or(defaults.updates_per_block),
            seed: self.train.seed.unwrap_or(defaults.seed),
            t_floor: self.train.t_floor.unwrap_or(defaults.t_floor),
            schedule,
        };
        train.validate()?;

        let kind = match mode {
            TrainMode::Dpsm => PartitionKind::Grid,
            _ => PartitionKind::Interval,
        };
        let boundaries = match (&self.partition.boundaries, self.partition.blocks) {
            (Some(_), Some(_)) => return Err(invalid("partition", "set either boundaries or blocks, not both")),
            (Some(b), None) => b.clone(),
            (None, Some(n)) => BlockPartition::uniform(n)?.boundaries,
            (None, None) if mode == TrainMode::Sa => vec![0.0, 1.0],
            (None, None) => return Err(invalid("partition", "set boundaries or blocks")),
        };
        let partition = BlockPartition::new(kind, boundaries)?;
        let hidden = self.model.hidden.clone().unwrap_or_else(|| vec![100, 150, 100]);
        let spec = MlpSpec::for_2d(&hidden, mode.time_conditioned())?;

        let resolved_file = RunConfig {
            mode: Some(mode),
            label: self.label.clone(),
            dataset: Some(dataset.clone()),
            out_dir: Some(out_dir.clone()),
            workers: Some(workers),
            schedule: ScheduleSection { c: Some(schedule.c) },
            partition: PartitionSection {
                boundaries: Some(partition.boundaries.clone()),
                blocks: None,
            },
            model: ModelSection { hidden: Some(hidden) },
            train: TrainSection {
                batch_size: Some(train.batch_size),
                lr: Some(train.lr),
                updates_per_block: Some(train.updates_per_block),
                seed: Some(train.seed),
                t_floor: Some(train.t_floor),
            },
        };
        let run = ResolvedRun {
            mode,
            label: self.label.clone(),
            dataset,
            out_dir,
            workers,
            partition,
            spec,
            train,
        };
        Ok((run, resolved_file))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }
}
