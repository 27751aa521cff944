//! Training regimes.
//!
//! Every regime regresses a noise-predicting network onto the injected noise
//! of forward-diffused data. They differ only in the time domain a block sees:
//!
//! - SA-DPM: one time-conditioned network on `[t_floor, 1]`.
//! - TPSM: one time-conditioned network per sub-interval `[t_i, t_{i+1}]`.
//! - DPSM: one time-free network per grid time `t_i = i/N`.

mod executor;
mod manifest;

pub use executor::{checkpoint_name, checkpoint_paths, run_partition, RunOutcome};
pub use manifest::{BlockEntry, BlockStatus, Manifest, MANIFEST_FILE, MANIFEST_VERSION};

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::net::{write_checkpoint, Adam, Mlp, MlpSpec};
use crate::schedule::Schedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Block `i` owns `[t_i, t_{i+1}]`.
    Interval,
    /// Block `i` is trained at the single time `t_{i+1}`.
    Grid,
}

/// Split of the diffusion time axis `[0, 1]` into blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub kind: PartitionKind,
    pub boundaries: Vec<f64>,
}

impl BlockPartition {
    pub fn new(kind: PartitionKind, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::invalid("boundaries", "need at least 0 and 1"));
        }
        if boundaries[0] != 0.0 || *boundaries.last().unwrap() != 1.0 {
            return Err(Error::invalid("boundaries", "must start at 0 and end at 1"));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("boundaries", "must be strictly increasing"));
        }
        Ok(BlockPartition { kind, boundaries })
    }

    pub fn interval(boundaries: Vec<f64>) -> Result<Self> {
        Self::new(PartitionKind::Interval, boundaries)
    }

    /// The single block `[0, 1]`.
    pub fn single() -> Self {
        BlockPartition {
            kind: PartitionKind::Interval,
            boundaries: vec![0.0, 1.0],
        }
    }

    /// `n` equal intervals.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::interval(uniform_boundaries(n)?)
    }

    /// Grid times `i/n` for `i = 1..=n`.
    pub fn grid(n: usize) -> Result<Self> {
        Self::new(PartitionKind::Grid, uniform_boundaries(n)?)
    }

    /// Two blocks split at 0.1.
    pub fn tpsm_a() -> Self {
        Self::interval(vec![0.0, 0.1, 1.0]).unwrap()
    }

    /// Four blocks split at 0.02, 0.1 and 0.3.
    pub fn tpsm_b() -> Self {
        Self::interval(vec![0.0, 0.02, 0.1, 0.3, 1.0]).unwrap()
    }

    /// 200 equal blocks.
    pub fn tpsm_c() -> Self {
        Self::uniform(200).unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Training domain of block `index`, clipped below at `t_floor`.
    pub fn domain(&self, index: usize, t_floor: f64) -> Result<TimeDomain> {
        if index >= self.num_blocks() {
            return Err(Error::invalid("block_index", format!("{index} out of range")));
        }
        let (lo, hi) = (self.boundaries[index], self.boundaries[index + 1]);
        match self.kind {
            PartitionKind::Interval => {
                if hi <= t_floor {
                    return Err(Error::Domain { t: hi, lo: t_floor, hi: 1.0 });
                }
                Ok(TimeDomain::Interval {
                    start: lo.max(t_floor),
                    end: hi,
                })
            }
            PartitionKind::Grid => {
                if hi < t_floor {
                    return Err(Error::Domain { t: hi, lo: t_floor, hi: 1.0 });
                }
                Ok(TimeDomain::Point(hi))
            }
        }
    }
}

fn uniform_boundaries(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("blocks", "must be at least 1"));
    }
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDomain {
    Interval { start: f64, end: f64 },
    Point(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Sa,
    Tpsm,
    Dpsm,
}

impl TrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Sa => "sa",
            TrainMode::Tpsm => "tpsm",
            TrainMode::Dpsm => "dpsm",
        }
    }

    pub fn time_conditioned(self) -> bool {
        !matches!(self, TrainMode::Dpsm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub updates_per_block: usize,
    pub seed: u64,
    /// Smallest training time; excludes the `σ = 0` singularity at `t = 0`.
    pub t_floor: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            lr: 1e-3,
            updates_per_block: 5000,
            seed: 0,
            t_floor: 1e-5,
            schedule: Schedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if !(self.t_floor > 0.0 && self.t_floor < 1.0) {
            return Err(Error::invalid("t_floor", "must lie in (0, 1)"));
        }
        Schedule::linear(self.schedule.c)?;
        Ok(())
    }

    /// Seed of block `index`: `seed XOR index`.
    pub fn block_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }
}

/// One block's training task.
#[derive(Debug, Clone)]
pub struct BlockJob<'a> {
    pub block_index: usize,
    pub domain: TimeDomain,
    pub spec: MlpSpec,
    pub config: TrainConfig,
    pub data: &'a Dataset,
    /// Where to write the trained parameters, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub block_index: usize,
    /// Loss of the untrained network on the first batch.
    pub initial_loss: Option<f64>,
    /// Mean loss over the last (up to) 100 updates.
    pub final_loss: Option<f64>,
    pub updates: usize,
    pub wall_seconds: f64,
    pub checkpoint: Option<PathBuf>,
    /// Mean loss over each tenth of training.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockOutcome {
    pub model: Mlp,
    pub report: TrainReport,
}

const FINAL_WINDOW: usize = 100;
const CURVE_POINTS: usize = 10;

/// Draws one training batch: network inputs and noise targets.
fn draw_batch(
    rng: &mut ChaCha8Rng,
    job: &BlockJob<'_>,
    time_conditioned: bool,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let p = job.config.batch_size;
    let width = if time_conditioned { 4 } else { 2 };
    let mut inputs = Array2::zeros((p, width));
    let mut targets = Array2::zeros((p, 2));
    let n = job.data.len();
    let sched = &job.config.schedule;
    for j in 0..p {
        let tau = match job.domain {
            TimeDomain::Interval { start, end } => start + (end - start) * rng.random::<f64>(),
            TimeDomain::Point(t) => t,
        };
        let x0 = job.data.points[rng.random_range(0..n)];
        let eps: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let m = sched.marginal(tau)?;
        inputs[[j, 0]] = m.mu * x0[0] + m.sigma * eps[0];
        inputs[[j, 1]] = m.mu * x0[1] + m.sigma * eps[1];
        if time_conditioned {
            inputs[[j, 2]] = tau;
            inputs[[j, 3]] = tau;
        }
        targets[[j, 0]] = eps[0];
        targets[[j, 1]] = eps[1];
    }
    Ok((inputs, targets))
}

fn check_job(job: &BlockJob<'_>) -> Result<()> {
    job.config.validate()?;
    job.spec.validate()?;
    if job.data.is_empty() {
        return Err(Error::invalid("dataset", "no samples"));
    }
    if job.spec.data_dim() != 2 || job.spec.output_dim() != 2 {
        return Err(Error::Shape("score networks map 2D points to 2D noise".into()));
    }
    let (lo, hi) = match job.domain {
        TimeDomain::Interval { start, end } => (start, end),
        TimeDomain::Point(t) => (t, t),
    };
    if lo < job.config.t_floor || hi > 1.0 || lo > hi {
        return Err(Error::Domain {
            t: if lo < job.config.t_floor { lo } else { hi },
            lo: job.config.t_floor,
            hi: 1.0,
        });
    }
    Ok(())
}

fn train_loop(job: &BlockJob<'_>) -> Result<BlockOutcome> {
    let started = Instant::now();
    let seed = job.config.block_seed(job.block_index);
    let mut model = Mlp::init(job.spec.clone(), seed)?;
    let mut adam = Adam::new(model.params(), job.config.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let total = job.config.updates_per_block;
    let tc = job.spec.time_conditioned;
    let mut losses = Vec::with_capacity(total);
    for update in 0..total {
        let (inputs, targets) = draw_batch(&mut rng, job, tc)?;
        let (loss, grads) = model.mse_loss_and_grad(inputs.view(), targets.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                block: job.block_index,
                update,
            });
        }
        losses.push(loss);
        adam.step(model.params_mut(), &grads)?;
    }

    if let Some(path) = &job.checkpoint {
        write_checkpoint(path, &model)?;
    }

    let tail = &losses[losses.len().saturating_sub(FINAL_WINDOW)..];
    let final_loss = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    let chunk = total.div_ceil(CURVE_POINTS).max(1);
    let loss_curve = losses
        .chunks(chunk)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let report = TrainReport {
        block_index: job.block_index,
        initial_loss: losses.first().copied(),
        final_loss,
        updates: losses.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        checkpoint: job.checkpoint.clone(),
        loss_curve,
    };
    Ok(BlockOutcome { model, report })
}

/// Trains a time-conditioned block on an interval of diffusion times.
pub fn train_block_tpsm(job: &BlockJob<'_>) -> Result<BlockOutcome> {
    if !matches!(job.domain, TimeDomain::Interval { .. }) {
        return Err(Error::invalid("time_domain", "TPSM blocks own an interval"));
    }
    if !job.spec.time_conditioned {
        return Err(Error::invalid("spec", "TPSM blocks need a time-conditioned network"));
    }
    check_job(job)?;
    train_loop(job)
}

/// Trains a time-free block at a single diffusion time.
pub fn train_block_dpsm(job: &BlockJob<'_>) -> Result<BlockOutcome> {
    if !matches!(job.domain, TimeDomain::Point(_)) {
        return Err(Error::invalid("time_domain", "DPSM blocks own a single time"));
    }
    if job.spec.time_conditioned {
        return Err(Error::invalid("spec", "DPSM blocks use networks without a time input"));
    }
    check_job(job)?;
    train_loop(job)
}

/// Standard approach: a single time-conditioned network on `[t_floor, 1]`.
pub fn train_sa(data: &Dataset, config: &TrainConfig, spec: &MlpSpec) -> Result<BlockOutcome> {
    let domain = BlockPartition::single().domain(0, config.t_floor)?;
    train_block_tpsm(&BlockJob {
        block_index: 0,
        domain,
        spec: spec.clone(),
        config: *config,
        data,
        checkpoint: None,
    })
}

/// Dispatches on the domain kind.
pub fn train_block(job: &BlockJob<'_>) -> Result<BlockOutcome> {
    match job.domain {
        TimeDomain::Interval { .. } => train_block_tpsm(job),
        TimeDomain::Point(_) => train_block_dpsm(job),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Toy2D;

    fn small_config(updates: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            updates_per_block: updates,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn gaussian_data(n: usize) -> Dataset {
        Dataset::new(Toy2D::gaussian([0.0, 0.0], 1.0, 1).unwrap().sample(n).unwrap()).unwrap()
    }

    #[test]
    fn partition_presets() {
        assert_eq!(BlockPartition::tpsm_a().boundaries, vec![0.0, 0.1, 1.0]);
        assert_eq!(BlockPartition::tpsm_b().boundaries, vec![0.0, 0.02, 0.1, 0.3, 1.0]);
        let c = BlockPartition::tpsm_c();
        assert_eq!(c.num_blocks(), 200);
        assert_eq!(c.boundaries[1], 1.0 / 200.0);
        assert_eq!(*c.boundaries.last().unwrap(), 1.0);
        let g = BlockPartition::grid(4).unwrap();
        assert_eq!(g.domain(0, 1e-5).unwrap(), TimeDomain::Point(0.25));
        assert_eq!(g.domain(3, 1e-5).unwrap(), TimeDomain::Point(1.0));
    }

    #[test]
    fn partition_validation() {
        assert!(BlockPartition::interval(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(BlockPartition::interval(vec![0.1, 1.0]).is_err());
        assert!(BlockPartition::interval(vec![0.0, 0.9]).is_err());
        assert!(BlockPartition::interval(vec![0.0]).is_err());
        assert!(BlockPartition::uniform(0).is_err());
    }

    #[test]
    fn first_interval_is_floored() {
        let d = BlockPartition::tpsm_a().domain(0, 1e-5).unwrap();
        assert_eq!(d, TimeDomain::Interval { start: 1e-5, end: 0.1 });
        let tiny = BlockPartition::interval(vec![0.0, 1e-6, 1.0]).unwrap();
        assert!(matches!(tiny.domain(0, 1e-5), Err(Error::Domain { .. })));
    }

    #[test]
    fn zero_updates_returns_initialization() {
        let data = gaussian_data(10);
        let config = small_config(0);
        let spec = MlpSpec::standard_2d(true);
        let out = train_sa(&data, &config, &spec).unwrap();
        assert_eq!(out.report.updates, 0);
        assert_eq!(out.report.final_loss, None);
        assert_eq!(out.model, Mlp::init(spec, config.block_seed(0)).unwrap());
    }

    #[test]
    fn regime_preconditions() {
        let data = gaussian_data(10);
        let config = small_config(1);
        let job = |domain, tc| BlockJob {
            block_index: 0,
            domain,
            spec: MlpSpec::for_2d(&[8], tc).unwrap(),
            config,
            data: &data,
            checkpoint: None,
        };
        let interval = TimeDomain::Interval { start: 0.1, end: 0.2 };
        assert!(train_block_tpsm(&job(interval, false)).is_err());
        assert!(train_block_tpsm(&job(TimeDomain::Point(0.5), true)).is_err());
        assert!(train_block_dpsm(&job(TimeDomain::Point(0.5), true)).is_err());
        assert!(matches!(
            train_block_dpsm(&job(TimeDomain::Point(1e-7), false)),
            Err(Error::Domain { .. })
        ));
        assert!(train_block(&job(TimeDomain::Point(0.5), false)).is_ok());
        assert!(train_block(&job(interval, true)).is_ok());
    }

    #[test]
    fn non_finite_data_aborts() {
        let mut data = gaussian_data(4);
        data.points[0] = [f64::MAX, f64::MAX];
        data.points[1] = [f64::MAX, f64::MAX];
        data.points[2] = [f64::MAX, f64::MAX];
        data.points[3] = [f64::MAX, f64::MAX];
        let spec = MlpSpec::for_2d(&[8], true).unwrap();
        let err = train_sa(&data, &small_config(3), &spec).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { block: 0, update: 0 }), "{err:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = gaussian_data(100);
        let spec = MlpSpec::for_2d(&[16, 16], true).unwrap();
        let a = train_sa(&data, &small_config(20), &spec).unwrap();
        let b = train_sa(&data, &small_config(20), &spec).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.loss_curve, b.report.loss_curve);
        assert_eq!(a.report.loss_curve.len(), 10);
    }

    #[test]
    fn loss_on_fixed_batch_decreases() {
        // 10 Adam steps on one fixed batch, 20 seeds; at least 19 must be
        // strictly monotone.
        let data = gaussian_data(512);
        // The 100-150-100 net overshoots after ~7 steps: early Adam updates
        // are sign-like, and coherent 1e-3 moves across wide layers add up.
        let spec = MlpSpec::for_2d(&[32, 32], true).unwrap();
        let mut monotone = 0;
        for seed in 0..20u64 {
            let config = TrainConfig { batch_size: 512, seed, ..TrainConfig::default() };
            let job = BlockJob {
                block_index: 0,
                domain: TimeDomain::Interval { start: config.t_floor, end: 1.0 },
                spec: spec.clone(),
                config,
                data: &data,
                checkpoint: None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = draw_batch(&mut rng, &job, true).unwrap();
            let mut model = Mlp::init(spec.clone(), seed).unwrap();
            let mut adam = Adam::new(model.params(), config.lr).unwrap();
            let mut prev = f64::INFINITY;
            let mut ok = true;
            for _ in 0..=10 {
                let (loss, g) = model.mse_loss_and_grad(x.view(), y.view()).unwrap();
                ok &= loss < prev;
                prev = loss;
                adam.step(model.params_mut(), &g).unwrap();
            }
            monotone += ok as usize;
        }
        assert!(monotone >= 19, "{monotone}/20");
    }
}
