//! Inference over a composed model.
//!
//! The probability-flow ODE `dx/dt = −½b(t)(x + s(x, t))` transports data at
//! `t_floor` to (approximately) `N(0, I)` at `t = 1`. Its divergence is
//! computed exactly, so a forward integration gives the log-likelihood and a
//! backward one generates samples.

mod grid;
mod integrate;

pub use grid::{density_grid, DensityGrid, GridOptions};
pub use integrate::{
    generate_ode, generate_ode_batch, generate_sde, generate_sde_batch, integrate, integrate_batch,
    log_likelihood, log_likelihood_batch, nats_to_bits_per_dim, Direction, IntegrationConfig, Method,
    PathResult,
};

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};

use crate::net::{read_checkpoint, Mlp};
use crate::schedule::{gaussian_log_density, GaussianOracle, Schedule};
use crate::train::{BlockPartition, BlockStatus, Manifest, PartitionKind};
use crate::{Error, Point, Result};

/// A score field `s(x, τ) ≈ ∇ₓ log p_τ(x)` evaluated on a batch of points.
pub trait ScoreModel: Send + Sync {
    /// Scores for the rows of `xs` at time `tau`, and `tr ∂s/∂x` per row when
    /// `with_trace` is set.
    fn score_batch(
        &self,
        schedule: &Schedule,
        xs: ArrayView2<f64>,
        tau: f64,
        with_trace: bool,
    ) -> Result<(Array2<f64>, Option<Array1<f64>>)>;
}

/// Noise-predicting network: `s = −ε_θ(x, τ)/σ_τ`.
impl ScoreModel for Mlp {
    fn score_batch(
        &self,
        schedule: &Schedule,
        xs: ArrayView2<f64>,
        tau: f64,
        with_trace: bool,
    ) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
        let sigma = schedule.marginal(tau)?.sigma;
        if sigma <= 0.0 {
            return Err(Error::Singular { sigma });
        }
        let n = xs.nrows();
        // Same input layout as training: [x, τ, τ] or [x].
        let inputs = if self.spec().time_conditioned {
            let mut a = Array2::from_elem((n, 4), tau);
            a.slice_mut(ndarray::s![.., 0..2]).assign(&xs);
            a
        } else {
            xs.to_owned()
        };
        let scale = -1.0 / sigma;
        if with_trace {
            let (eps, tr) = self.forward_with_trace_batch(inputs.view())?;
            Ok((eps * scale, Some(tr * scale)))
        } else {
            Ok((self.forward_batch(inputs.view())? * scale, None))
        }
    }
}

impl ScoreModel for GaussianOracle {
    fn score_batch(
        &self,
        schedule: &Schedule,
        xs: ArrayView2<f64>,
        tau: f64,
        with_trace: bool,
    ) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
        let (mean, var) = self.diffused(schedule, tau);
        let mut s = xs.to_owned();
        for mut row in s.rows_mut() {
            row[0] = -(row[0] - mean[0]) / var;
            row[1] = -(row[1] - mean[1]) / var;
        }
        let tr = with_trace.then(|| Array1::from_elem(xs.nrows(), -2.0 / var));
        Ok((s, tr))
    }
}

/// Density assumed for `x(1)` when computing likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalPrior {
    /// `N(0, I)`, the usual choice.
    StandardNormal,
    /// The exact marginal at `t = 1` of a diffused Gaussian. Only meaningful
    /// for analytic models; it removes the prior mismatch from comparisons
    /// against closed-form densities.
    Diffused(GaussianOracle),
}

impl TerminalPrior {
    pub fn log_density(&self, schedule: &Schedule, x: Point) -> f64 {
        match self {
            TerminalPrior::StandardNormal => gaussian_log_density(x, [0.0, 0.0], 1.0),
            TerminalPrior::Diffused(o) => o.log_density(schedule, x, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeMode {
    /// Each block owns a time interval and is queried at the actual time.
    Interval,
    /// Each block is a single grid time `t_i`; the score is held constant
    /// over `(t_{i−1}, t_i]`.
    PiecewiseConstant,
}

/// A contiguous piece of `[t_floor, 1]` served by one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub block: usize,
    /// Time the block is queried at, `None` for the actual time.
    pub frozen_tau: Option<f64>,
}

/// Blocks composed along the time axis.
///
/// In interval mode a boundary time belongs to the block on its right and the
/// last interval is closed. In piecewise-constant mode grid block `i` covers
/// `(t_i, t_{i+1}]` (the first one reaching down to `t_floor`) and is always
/// evaluated at `t_{i+1}`, its training time.
#[derive(Clone)]
pub struct ComposedModel {
    schedule: Schedule,
    t_floor: f64,
    partition: BlockPartition,
    blocks: Vec<Arc<dyn ScoreModel>>,
    segments: Vec<Segment>,
    prior: TerminalPrior,
}

impl fmt::Debug for ComposedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComposedModel")
            .field("schedule", &self.schedule)
            .field("t_floor", &self.t_floor)
            .field("partition", &self.partition)
            .field("blocks", &self.blocks.len())
            .field("prior", &self.prior)
            .finish()
    }
}

impl ComposedModel {
    pub fn new(
        schedule: Schedule,
        partition: BlockPartition,
        t_floor: f64,
        blocks: Vec<Arc<dyn ScoreModel>>,
    ) -> Result<Self> {
        if !(t_floor > 0.0 && t_floor < 1.0) {
            return Err(Error::invalid("t_floor", format!("{t_floor} outside (0, 1)")));
        }
        if blocks.len() != partition.num_blocks() {
            return Err(Error::invalid(
                "blocks",
                format!("{} blocks for a {}-block partition", blocks.len(), partition.num_blocks()),
            ));
        }
        let b = &partition.boundaries;
        let mut segments = Vec::new();
        for i in 0..partition.num_blocks() {
            if b[i + 1] <= t_floor {
                continue;
            }
            segments.push(Segment {
                start: b[i].max(t_floor),
                end: b[i + 1],
                block: i,
                frozen_tau: (partition.kind == PartitionKind::Grid).then_some(b[i + 1]),
            });
        }
        Ok(ComposedModel {
            schedule,
            t_floor,
            partition,
            blocks,
            segments,
            prior: TerminalPrior::StandardNormal,
        })
    }

    /// One block covering `[0, 1]` with the closed-form score of `oracle`.
    pub fn analytic(schedule: Schedule, oracle: GaussianOracle, t_floor: f64) -> Result<Self> {
        Self::new(schedule, BlockPartition::single(), t_floor, vec![Arc::new(oracle)])
    }

    /// Loads every block listed in `manifest`; checkpoint paths are relative
    /// to `dir`.
    pub fn from_manifest(manifest: &Manifest, dir: &Path) -> Result<Self> {
        let mut blocks: Vec<Arc<dyn ScoreModel>> = Vec::with_capacity(manifest.blocks.len());
        for entry in &manifest.blocks {
            if entry.status != BlockStatus::Ok {
                return Err(Error::invalid(
                    "manifest",
                    format!("block {} failed during training", entry.index),
                ));
            }
            if let Some(oracle) = entry.analytic {
                blocks.push(Arc::new(oracle));
                continue;
            }
            let Some(file) = &entry.checkpoint else {
                return Err(Error::invalid("manifest", format!("block {} has no checkpoint", entry.index)));
            };
            let path = dir.join(file);
            let net = read_checkpoint(&path)?;
            if let Some(spec) = &entry.spec {
                if spec != net.spec() {
                    return Err(Error::format(&path, "architecture disagrees with the manifest"));
                }
            }
            if net.spec().data_dim() != 2 || net.spec().output_dim() != 2 {
                return Err(Error::format(&path, "not a 2D score network"));
            }
            blocks.push(Arc::new(net));
        }
        Self::new(manifest.schedule, manifest.partition.clone(), manifest.t_floor, blocks)
    }

    /// Reads a manifest file (or a run directory) and its checkpoints.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = Manifest::read(path)?;
        let dir = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        Self::from_manifest(&manifest, &dir)
    }

    pub fn with_prior(mut self, prior: TerminalPrior) -> Self {
        self.prior = prior;
        self
    }

    pub fn prior(&self) -> &TerminalPrior {
        &self.prior
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn t_floor(&self) -> f64 {
        self.t_floor
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn mode(&self) -> ComposeMode {
        match self.partition.kind {
            PartitionKind::Interval => ComposeMode::Interval,
            PartitionKind::Grid => ComposeMode::PiecewiseConstant,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Pieces of `[t_floor, 1]` in increasing time order.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= self.t_floor && t <= 1.0) {
            return Err(Error::Domain { t, lo: self.t_floor, hi: 1.0 });
        }
        Ok(())
    }

    /// Segment owning time `t`.
    pub fn segment_at(&self, t: f64) -> Result<&Segment> {
        self.check_time(t)?;
        let seg = match self.mode() {
            ComposeMode::Interval => self
                .segments
                .iter()
                .rev()
                .find(|s| s.start <= t)
                .unwrap_or(&self.segments[0]),
            ComposeMode::PiecewiseConstant => self
                .segments
                .iter()
                .find(|s| t <= s.end)
                .unwrap_or(&self.segments[self.segments.len() - 1]),
        };
        Ok(seg)
    }

    /// Index of the block owning time `t`.
    pub fn block_at(&self, t: f64) -> Result<usize> {
        Ok(self.segment_at(t)?.block)
    }

    /// Field `f` and, optionally, `tr ∂f/∂x` for a batch at time `t`, using
    /// the block of `seg` regardless of ownership at `t`. Integrators call this
    /// so that no step mixes two blocks.
    pub(crate) fn field_on(
        &self,
        seg: &Segment,
        xs: ArrayView2<f64>,
        t: f64,
        with_div: bool,
    ) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
        let tau = seg.frozen_tau.unwrap_or(t);
        let (s, tr) = self.blocks[seg.block].score_batch(&self.schedule, xs, tau, with_div)?;
        let half_b = 0.5 * self.schedule.beta(t);
        let f = (&xs + &s) * -half_b;
        let div = tr.map(|tr| tr.mapv(|v| -half_b * (2.0 + v)));
        Ok((f, div))
    }

    pub(crate) fn score_on(&self, seg: &Segment, xs: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let tau = seg.frozen_tau.unwrap_or(t);
        Ok(self.blocks[seg.block].score_batch(&self.schedule, xs, tau, false)?.0)
    }

    pub fn field_batch(&self, xs: ArrayView2<f64>, t: f64, with_div: bool) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
        let seg = *self.segment_at(t)?;
        self.field_on(&seg, xs, t, with_div)
    }

    /// Composed score `s(x, t)`.
    pub fn score(&self, x: Point, t: f64) -> Result<Point> {
        let seg = *self.segment_at(t)?;
        let xs = ArrayView2::from_shape((1, 2), &x).expect("1x2");
        let s = self.score_on(&seg, xs, t)?;
        Ok([s[[0, 0]], s[[0, 1]]])
    }
}

/// `f(x, t) = −½b(t)(x + s(x, t))`.
pub fn ode_field(model: &ComposedModel, x: Point, t: f64) -> Result<Point> {
    let xs = ArrayView2::from_shape((1, 2), &x).expect("1x2");
    let (f, _) = model.field_batch(xs, t, false)?;
    Ok([f[[0, 0]], f[[0, 1]]])
}

/// `tr ∂f/∂x = −½b(t)(2 + tr ∂s/∂x)`, exact.
pub fn divergence(model: &ComposedModel, x: Point, t: f64) -> Result<f64> {
    let xs = ArrayView2::from_shape((1, 2), &x).expect("1x2");
    let (_, div) = model.field_batch(xs, t, true)?;
    Ok(div.expect("requested")[0])
}
