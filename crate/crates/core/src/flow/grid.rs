use std::fmt::Write as _;
use std::path::Path;

use super::integrate::{log_likelihood, log_likelihood_batch, Direction, IntegrationConfig};
use super::ComposedModel;
use crate::data::Bounds;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridOptions {
    /// Worker threads; cells are split into contiguous chunks.
    pub threads: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { threads: 1 }
    }
}

/// Log-density on a regular grid including the bounds' edges.
///
/// Cells are stored row-major: cell `(i, j)` (x index `i`, y index `j`) lives
/// at `j * nx + i`. Cells whose integration failed hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub log_density: Vec<f64>,
}

impl DensityGrid {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn log_density_at(&self, i: usize, j: usize) -> f64 {
        self.log_density[j * self.nx() + i]
    }

    pub fn density_at(&self, i: usize, j: usize) -> f64 {
        self.log_density_at(i, j).exp()
    }

    /// Number of cells flagged as failed.
    pub fn failed_cells(&self) -> usize {
        self.log_density.iter().filter(|v| !v.is_finite()).count()
    }

    /// Trapezoid-rule mass of the density; failed cells count as zero.
    pub fn trapezoid_mass(&self) -> f64 {
        let weights = |v: &[f64]| -> Vec<f64> {
            let n = v.len();
            (0..n)
                .map(|k| {
                    let left = if k > 0 { v[k] - v[k - 1] } else { 0.0 };
                    let right = if k + 1 < n { v[k + 1] - v[k] } else { 0.0 };
                    0.5 * (left + right)
                })
                .collect()
        };
        let (wx, wy) = (weights(&self.xs), weights(&self.ys));
        let mut mass = 0.0;
        for (j, wy) in wy.iter().enumerate() {
            for (i, wx) in wx.iter().enumerate() {
                let d = self.density_at(i, j);
                if d.is_finite() {
                    mass += wx * wy * d;
                }
            }
        }
        mass
    }

    /// Whitespace-separated `x y density log_density` rows, `nan` for failed
    /// cells, with a blank line after every grid row (gnuplot `pm3d` layout).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nx {} ny {} failed {}", self.nx(), self.ny(), self.failed_cells());
        out.push_str("# x y density log_density\n");
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                let lp = self.log_density_at(i, j);
                if lp.is_finite() {
                    let _ = writeln!(out, "{x} {y} {} {lp}", lp.exp());
                } else {
                    let _ = writeln!(out, "{x} {y} nan nan");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

fn evaluate(model: &ComposedModel, pts: &[Point], cfg: &IntegrationConfig) -> Vec<f64> {
    match log_likelihood_batch(model, pts, cfg) {
        Ok(r) => r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        // Some block rejected the batch as a whole; isolate the bad cells.
        Err(_) => pts
            .iter()
            .map(|p| log_likelihood(model, *p, cfg).unwrap_or(f64::NAN))
            .collect(),
    }
}

/// Evaluates `log p` on a `resolution × resolution` grid over `bounds`.
pub fn density_grid(
    model: &ComposedModel,
    bounds: &Bounds,
    resolution: usize,
    cfg: &IntegrationConfig,
    options: GridOptions,
) -> Result<DensityGrid> {
    if resolution < 2 {
        return Err(Error::invalid("resolution", "need at least 2 points per axis"));
    }
    if options.threads == 0 {
        return Err(Error::invalid("threads", "must be at least 1"));
    }
    cfg.validate()?;
    if cfg.direction != Direction::Forward || cfg.t_end != 1.0 {
        return Err(Error::invalid("direction", "likelihood integrates forward up to t = 1"));
    }
    if cfg.t_start < model.t_floor() {
        return Err(Error::Domain { t: cfg.t_start, lo: model.t_floor(), hi: 1.0 });
    }
    let xs = axis(bounds.x.0, bounds.x.1, resolution);
    let ys = axis(bounds.y.0, bounds.y.1, resolution);
    let pts: Vec<Point> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();

    let chunk = pts.len().div_ceil(options.threads);
    let log_density = if options.threads == 1 {
        evaluate(model, &pts, cfg)
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = pts
                .chunks(chunk)
                .map(|c| scope.spawn(move || evaluate(model, c, cfg)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("grid worker panicked"))
                .collect()
        })
    };
    Ok(DensityGrid { xs, ys, log_density })
}
