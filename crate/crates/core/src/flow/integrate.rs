use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ComposedModel, Segment};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::invalid("method", format!("unknown method {other:?}, expected euler or rk4"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Data towards noise, increasing time.
    Forward,
    /// Noise towards data, decreasing time.
    Backward,
}

/// Fixed-step integration over `[t_start, t_end]`.
///
/// `steps` is distributed over the model's segments in proportion to their
/// length (at least one each), so block boundaries are always step endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub method: Method,
    pub steps: usize,
    pub direction: Direction,
    pub t_start: f64,
    pub t_end: f64,
}

impl IntegrationConfig {
    pub fn new(method: Method, steps: usize, t_start: f64, t_end: f64) -> Result<Self> {
        let direction = if t_end > t_start { Direction::Forward } else { Direction::Backward };
        let cfg = IntegrationConfig { method, steps, direction, t_start, t_end };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `t_floor → 1`, as used for likelihoods.
    pub fn forward(method: Method, steps: usize, t_floor: f64) -> Result<Self> {
        Self::new(method, steps, t_floor, 1.0)
    }

    /// `1 → t_floor`, as used for generation.
    pub fn backward(method: Method, steps: usize, t_floor: f64) -> Result<Self> {
        Self::new(method, steps, 1.0, t_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start == self.t_end {
            return Err(Error::invalid("t_start/t_end", "must be finite and distinct"));
        }
        let forward = self.t_end > self.t_start;
        if forward != (self.direction == Direction::Forward) {
            return Err(Error::invalid("direction", "disagrees with t_start/t_end"));
        }
        Ok(())
    }
}

/// Outcome of integrating one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathResult {
    pub terminal_state: Point,
    /// `∫ tr ∂f/∂x dt` from `t_start` to `t_end` (signed by direction).
    pub delta_logp: f64,
    pub steps_taken: usize,
}

/// One fixed step `[t0, t1]` inside a single segment.
#[derive(Debug, Clone, Copy)]
struct Step {
    seg: Segment,
    t0: f64,
    t1: f64,
}

fn split_steps(total: usize, lengths: &[f64]) -> Vec<usize> {
    let sum: f64 = lengths.iter().sum();
    let quota: Vec<f64> = lengths.iter().map(|l| total as f64 * l / sum).collect();
    let mut n: Vec<usize> = quota.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let rem = |n: &[usize], i: usize| quota[i] - n[i] as f64;
    let mut assigned: usize = n.iter().sum();
    while assigned < total {
        let i = (0..n.len()).max_by(|&a, &b| rem(&n, a).total_cmp(&rem(&n, b))).unwrap();
        n[i] += 1;
        assigned += 1;
    }
    while assigned > total {
        let Some(i) = (0..n.len()).filter(|&i| n[i] > 1).min_by(|&a, &b| rem(&n, a).total_cmp(&rem(&n, b))) else {
            break;
        };
        n[i] -= 1;
        assigned -= 1;
    }
    n
}

fn step_grid(model: &ComposedModel, cfg: &IntegrationConfig) -> Result<Vec<Step>> {
    cfg.validate()?;
    let (lo, hi) = (cfg.t_start.min(cfg.t_end), cfg.t_start.max(cfg.t_end));
    let floor = model.t_floor();
    for t in [lo, hi] {
        if !(t >= floor && t <= 1.0) {
            return Err(Error::Domain { t, lo: floor, hi: 1.0 });
        }
    }
    let pieces: Vec<(Segment, f64, f64)> = model
        .segments()
        .iter()
        .filter_map(|s| {
            let (a, b) = (s.start.max(lo), s.end.min(hi));
            (b > a).then_some((*s, a, b))
        })
        .collect();
    let lengths: Vec<f64> = pieces.iter().map(|(_, a, b)| b - a).collect();
    let counts = split_steps(cfg.steps.max(pieces.len()), &lengths);
    let mut steps = Vec::with_capacity(counts.iter().sum());
    for ((seg, a, b), n) in pieces.into_iter().zip(counts) {
        for k in 0..n {
            let t0 = a + (b - a) * k as f64 / n as f64;
            let t1 = if k + 1 == n { b } else { a + (b - a) * (k + 1) as f64 / n as f64 };
            steps.push(Step { seg, t0, t1 });
        }
    }
    if cfg.direction == Direction::Backward {
        steps.reverse();
        for s in &mut steps {
            std::mem::swap(&mut s.t0, &mut s.t1);
        }
    }
    Ok(steps)
}

fn points_to_array(xs: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((xs.len(), 2), |(i, k)| xs[i][k])
}

/// Tracks the first non-finite step of each row.
struct Blowups(Vec<Option<(usize, f64)>>);

impl Blowups {
    fn new(n: usize) -> Self {
        Blowups(vec![None; n])
    }

    fn check(&mut self, x: &Array2<f64>, logp: Option<&Array1<f64>>, step: usize, t: f64) {
        for (i, row) in x.rows().into_iter().enumerate() {
            if self.0[i].is_none() && !(row.iter().all(|v| v.is_finite()) && logp.is_none_or(|l| l[i].is_finite())) {
                self.0[i] = Some((step, t));
            }
        }
    }

    fn error(&self, i: usize) -> Option<Error> {
        self.0[i].map(|(step, t)| Error::Blowup { step, t })
    }
}

/// Integrates every point in `xs`; a point whose state turns non-finite
/// yields its own `Blowup` error without affecting the others.
pub fn integrate_batch(
    model: &ComposedModel,
    xs: &[Point],
    cfg: &IntegrationConfig,
    with_logp: bool,
) -> Result<Vec<Result<PathResult>>> {
    let steps = step_grid(model, cfg)?;
    let n = xs.len();
    let mut x = points_to_array(xs);
    let mut logp = Array1::<f64>::zeros(n);
    let mut blowups = Blowups::new(n);
    blowups.check(&x, None, 0, cfg.t_start);

    let eval = |x: ArrayView2<f64>, seg: &Segment, t: f64| model.field_on(seg, x, t, with_logp);
    for (k, st) in steps.iter().enumerate() {
        let h = st.t1 - st.t0;
        match cfg.method {
            Method::Euler => {
                let (f, d) = eval(x.view(), &st.seg, st.t0)?;
                x.scaled_add(h, &f);
                if let Some(d) = d {
                    logp.scaled_add(h, &d);
                }
            }
            Method::Rk4 => {
                let tm = st.t0 + 0.5 * h;
                let (k1, d1) = eval(x.view(), &st.seg, st.t0)?;
                let (k2, d2) = eval((&x + &(&k1 * (0.5 * h))).view(), &st.seg, tm)?;
                let (k3, d3) = eval((&x + &(&k2 * (0.5 * h))).view(), &st.seg, tm)?;
                let (k4, d4) = eval((&x + &(&k3 * h)).view(), &st.seg, st.t1)?;
                Zip::from(&mut x)
                    .and(&k1)
                    .and(&k2)
                    .and(&k3)
                    .and(&k4)
                    .for_each(|x, a, b, c, d| *x += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
                if let (Some(a), Some(b), Some(c), Some(d)) = (d1, d2, d3, d4) {
                    Zip::from(&mut logp)
                        .and(&a)
                        .and(&b)
                        .and(&c)
                        .and(&d)
                        .for_each(|l, a, b, c, d| *l += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
                }
            }
        }
        blowups.check(&x, Some(&logp), k + 1, st.t1);
    }

    Ok((0..n)
        .map(|i| match blowups.error(i) {
            Some(e) => Err(e),
            None => Ok(PathResult {
                terminal_state: [x[[i, 0]], x[[i, 1]]],
                delta_logp: logp[i],
                steps_taken: steps.len(),
            }),
        })
        .collect())
}

pub fn integrate(model: &ComposedModel, x_init: Point, cfg: &IntegrationConfig, with_logp: bool) -> Result<PathResult> {
    integrate_batch(model, &[x_init], cfg, with_logp)?.remove(0)
}

/// `log p(x0) = log π(x(1)) + ∫ tr ∂f/∂x dt`, in nats, per point, where `π`
/// is the model's terminal prior (normally `N(0, I)`).
pub fn log_likelihood_batch(model: &ComposedModel, xs: &[Point], cfg: &IntegrationConfig) -> Result<Vec<Result<f64>>> {
    if cfg.direction != Direction::Forward || cfg.t_end != 1.0 {
        return Err(Error::invalid("direction", "likelihood integrates forward up to t = 1"));
    }
    let paths = integrate_batch(model, xs, cfg, true)?;
    Ok(paths
        .into_iter()
        .map(|p| {
            let p = p?;
            let lp = model.prior().log_density(model.schedule(), p.terminal_state) + p.delta_logp;
            if lp.is_finite() {
                Ok(lp)
            } else {
                Err(Error::Blowup { step: p.steps_taken, t: 1.0 })
            }
        })
        .collect())
}

pub fn log_likelihood(model: &ComposedModel, x0: Point, cfg: &IntegrationConfig) -> Result<f64> {
    log_likelihood_batch(model, &[x0], cfg)?.remove(0)
}

/// Pushes latent points back through the flow.
pub fn generate_ode_batch(model: &ComposedModel, zs: &[Point], cfg: &IntegrationConfig) -> Result<Vec<Result<Point>>> {
    if cfg.direction != Direction::Backward || cfg.t_start != 1.0 {
        return Err(Error::invalid("direction", "generation integrates backward from t = 1"));
    }
    Ok(integrate_batch(model, zs, cfg, false)?
        .into_iter()
        .map(|p| p.map(|p| p.terminal_state))
        .collect())
}

pub fn generate_ode(model: &ComposedModel, z: Point, cfg: &IntegrationConfig) -> Result<Point> {
    generate_ode_batch(model, &[z], cfg)?.remove(0)
}

/// Euler–Maruyama on the reverse SDE from `t = 1` down to `t_floor`:
/// `x ← x + b(t)(½x + s(x, t))h + √(b(t)h) ξ`.
///
/// Row `i` draws its noise from stream `i` of `seed`, so a sample does not
/// depend on the batch it was generated in.
pub fn generate_sde_batch(model: &ComposedModel, zs: &[Point], steps: usize, seed: u64) -> Result<Vec<Result<Point>>> {
    let cfg = IntegrationConfig::backward(Method::Euler, steps, model.t_floor())?;
    let grid = step_grid(model, &cfg)?;
    let n = zs.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut x = points_to_array(zs);
    let mut blowups = Blowups::new(n);
    blowups.check(&x, None, 0, 1.0);
    for (k, st) in grid.iter().enumerate() {
        let h = st.t0 - st.t1;
        let b = model.schedule().beta(st.t0);
        let s = model.score_on(&st.seg, x.view(), st.t0)?;
        let noise = (b * h).sqrt();
        for ((mut row, s), rng) in x.rows_mut().into_iter().zip(s.rows()).zip(&mut rngs) {
            for j in 0..2 {
                let xi: f64 = rng.sample(StandardNormal);
                row[j] += b * (0.5 * row[j] + s[j]) * h + noise * xi;
            }
        }
        blowups.check(&x, None, k + 1, st.t1);
    }
    Ok((0..n)
        .map(|i| match blowups.error(i) {
            Some(e) => Err(e),
            None => Ok([x[[i, 0]], x[[i, 1]]]),
        })
        .collect())
}

pub fn generate_sde(model: &ComposedModel, z: Point, steps: usize, seed: u64) -> Result<Point> {
    generate_sde_batch(model, &[z], steps, seed)?.remove(0)
}

/// Nats per sample to bits per dimension.
pub fn nats_to_bits_per_dim(nats: f64, dim: usize) -> f64 {
    nats / (dim as f64 * std::f64::consts::LN_2)
}
