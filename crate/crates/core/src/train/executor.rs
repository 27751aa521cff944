use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::manifest::{BlockEntry, BlockStatus, Manifest};
use super::{train_block, BlockJob, BlockOutcome, BlockPartition, TrainConfig, TrainMode};
use crate::data::Dataset;
use crate::net::{Mlp, MlpSpec};
use crate::{Error, Result};

/// Result of training every block of a partition.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// Per block, in partition order.
    pub results: Vec<Result<BlockOutcome>>,
    pub wall_seconds: f64,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.results.iter().all(|r| r.is_ok())
    }

    pub fn failed_blocks(&self) -> Vec<usize> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_err().then_some(i))
            .collect()
    }

    /// Trained models in block order, or `None` if any block failed.
    pub fn models(&self) -> Option<Vec<&Mlp>> {
        self.results
            .iter()
            .map(|r| r.as_ref().ok().map(|o| &o.model))
            .collect()
    }
}

pub fn checkpoint_name(index: usize) -> String {
    format!("block_{index:04}.psm")
}

/// Trains every block of `partition` as an independent job on `workers`
/// threads. Block `i` draws all of its randomness from `seed XOR i`, so
/// results do not depend on the worker count or scheduling order.
///
/// With `out_dir`, each block writes `block_NNNN.psm` and the manifest is
/// written after all jobs have joined, failed blocks included.
pub fn run_partition(
    partition: &BlockPartition,
    mode: TrainMode,
    dataset: &Dataset,
    config: &TrainConfig,
    spec: &MlpSpec,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    if workers == 0 {
        return Err(Error::invalid("workers", "must be at least 1"));
    }
    config.validate()?;
    spec.validate()?;
    if spec.time_conditioned != mode.time_conditioned() {
        return Err(Error::invalid(
            "spec.time_conditioned",
            format!("{} blocks need time_conditioned = {}", mode.label(), mode.time_conditioned()),
        ));
    }
    let expected_kind = match mode {
        TrainMode::Dpsm => super::PartitionKind::Grid,
        _ => super::PartitionKind::Interval,
    };
    if partition.kind != expected_kind {
        return Err(Error::invalid("partition", format!("{} needs a {expected_kind:?} partition", mode.label())));
    }
    if mode == TrainMode::Sa && partition.num_blocks() != 1 {
        return Err(Error::invalid("partition", "sa trains a single block on [0, 1]"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let n = partition.num_blocks();
    let mut jobs = Vec::with_capacity(n);
    for index in 0..n {
        jobs.push(BlockJob {
            block_index: index,
            domain: partition.domain(index, config.t_floor)?,
            spec: spec.clone(),
            config: *config,
            data: dataset,
            checkpoint: out_dir.map(|d| d.join(checkpoint_name(index))),
        });
    }

    let started = Instant::now();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<BlockOutcome>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let outcome = train_block(&jobs[i]);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let wall_seconds = started.elapsed().as_secs_f64();
    let results: Vec<Result<BlockOutcome>> = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every job ran"))
        .collect();

    let blocks = jobs
        .iter()
        .zip(&results)
        .map(|(job, result)| {
            let (t_start, t_end) = (partition.boundaries[job.block_index], partition.boundaries[job.block_index + 1]);
            let mut entry = BlockEntry {
                index: job.block_index,
                t_start,
                t_end,
                spec: Some(spec.clone()),
                checkpoint: job.checkpoint.as_ref().map(|_| checkpoint_name(job.block_index)),
                analytic: None,
                seed: config.block_seed(job.block_index),
                updates: 0,
                initial_loss: None,
                final_loss: None,
                wall_seconds: 0.0,
                status: BlockStatus::Ok,
                error: None,
            };
            match result {
                Ok(o) => {
                    entry.updates = o.report.updates;
                    entry.initial_loss = o.report.initial_loss;
                    entry.final_loss = o.report.final_loss;
                    entry.wall_seconds = o.report.wall_seconds;
                }
                Err(e) => {
                    entry.status = BlockStatus::Failed;
                    entry.error = Some(e.to_string());
                    entry.checkpoint = None;
                }
            }
            entry
        })
        .collect();

    let manifest = Manifest {
        mode,
        label: None,
        schedule: config.schedule,
        t_floor: config.t_floor,
        partition: partition.clone(),
        train: Some(*config),
        dataset: None,
        workers,
        wall_seconds,
        blocks,
        ..Manifest::default()
    };
    if let Some(dir) = out_dir {
        manifest.write(dir)?;
    }
    Ok(RunOutcome {
        manifest,
        results,
        wall_seconds,
    })
}

/// Checkpoint paths of a manifest written to `dir`.
pub fn checkpoint_paths(dir: &Path, manifest: &Manifest) -> Vec<Option<PathBuf>> {
    manifest
        .blocks
        .iter()
        .map(|b| b.checkpoint.as_ref().map(|c| dir.join(c)))
        .collect()
}
