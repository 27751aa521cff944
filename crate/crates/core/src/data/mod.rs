//! Synthetic 2D distributions.
//!
//! Sampling is deterministic in `(distribution, seed, stream)`. Each stream is
//! an independent ChaCha keystream, so parallel consumers can draw disjoint
//! sample sets from the same seed.

mod dataset;
mod glyph;

pub use dataset::Dataset;
pub use glyph::GlyphMask;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::schedule::gaussian_log_density;
use crate::{Error, Point, Result};

/// Axis-aligned box `[x.0, x.1] × [y.0, y.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Bounds {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        for (name, (lo, hi)) in [("bounds.x", x), ("bounds.y", y)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(name, format!("need finite lo < hi, got ({lo}, {hi})")));
            }
        }
        Ok(Bounds { x, y })
    }

    pub fn square(half_width: f64) -> Self {
        Bounds {
            x: (-half_width, half_width),
            y: (-half_width, half_width),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.x.0..=self.x.1).contains(&p[0]) && (self.y.0..=self.y.1).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Point,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Toy2DKind {
    Gaussian { mean: Point, var: f64 },
    GaussianMixture(Vec<MixtureComponent>),
    /// `cells × cells` board on `[-scale, scale]²`; cell `(i, j)` is active
    /// when `i + j` is even.
    Checkerboard { cells: usize, scale: f64 },
    TwoMoons { noise: f64 },
    /// Uniform choice of radius, uniform angle, isotropic Gaussian jitter.
    Rings { radii: Vec<f64>, noise: f64 },
    /// Uniform over the active pixels of a raster mapped onto `bounds`.
    Glyph { mask: GlyphMask, bounds: Bounds },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Toy2D {
    pub kind: Toy2DKind,
    pub seed: u64,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl Toy2D {
    pub fn new(kind: Toy2DKind, seed: u64) -> Result<Self> {
        match &kind {
            Toy2DKind::Gaussian { mean, var } => {
                check_positive("var", *var)?;
                if !mean.iter().all(|m| m.is_finite()) {
                    return Err(Error::invalid("mean", "must be finite"));
                }
            }
            Toy2DKind::GaussianMixture(components) => {
                if components.is_empty() {
                    return Err(Error::invalid("weights", "mixture needs at least one component"));
                }
                for (i, c) in components.iter().enumerate() {
                    check_positive(&format!("weights[{i}]"), c.weight)?;
                    check_positive(&format!("vars[{i}]"), c.var)?;
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid("weights", format!("must sum to 1, sum is {total}")));
                }
            }
            Toy2DKind::Checkerboard { cells, scale } => {
                if *cells == 0 {
                    return Err(Error::invalid("cells", "must be positive"));
                }
                check_positive("scale", *scale)?;
            }
            Toy2DKind::TwoMoons { noise } | Toy2DKind::Rings { noise, .. } => {
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::invalid("noise", "must be non-negative"));
                }
                if let Toy2DKind::Rings { radii, .. } = &kind {
                    if radii.is_empty() {
                        return Err(Error::invalid("radii", "need at least one radius"));
                    }
                    for (i, r) in radii.iter().enumerate() {
                        check_positive(&format!("radii[{i}]"), *r)?;
                    }
                }
            }
            Toy2DKind::Glyph { mask, .. } => {
                if mask.active_count() == 0 {
                    return Err(Error::invalid("mask", "glyph mask has no active pixels"));
                }
            }
        }
        Ok(Toy2D { kind, seed })
    }

    pub fn gaussian(mean: Point, var: f64, seed: u64) -> Result<Self> {
        Self::new(Toy2DKind::Gaussian { mean, var }, seed)
    }

    /// `k` equal-weight components evenly spaced on a circle.
    pub fn ring_mixture(k: usize, radius: f64, var: f64, seed: u64) -> Result<Self> {
        let components = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                MixtureComponent {
                    weight: 1.0 / k as f64,
                    mean: [radius * a.cos(), radius * a.sin()],
                    var,
                }
            })
            .collect();
        Self::new(Toy2DKind::GaussianMixture(components), seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Toy2D {
            kind: self.kind.clone(),
            seed,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// `n` i.i.d. samples from stream 0.
    pub fn sample(&self, n: usize) -> Result<Vec<Point>> {
        self.sample_stream(n, 0)
    }

    pub fn sample_stream(&self, n: usize, stream: u64) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        let mut rng = self.rng(stream);
        Ok((0..n).map(|_| self.draw(&mut rng)).collect())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Point {
        match &self.kind {
            Toy2DKind::Gaussian { mean, var } => {
                let sd = var.sqrt();
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                [mean[0] + sd * z0, mean[1] + sd * z1]
            }
            Toy2DKind::GaussianMixture(components) => {
                let u: f64 = rng.random();
                let c = pick_component(components, u);
                let sd = c.var.sqrt();
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                [c.mean[0] + sd * z0, c.mean[1] + sd * z1]
            }
            Toy2DKind::Checkerboard { cells, scale } => {
                let cells = *cells;
                let active = cells * cells - (cells * cells) / 2;
                let k = rng.random_range(0..active);
                // Enumerate active cells row by row.
                let (mut i, mut j, mut seen) = (0, 0, 0);
                'outer: for ii in 0..cells {
                    for jj in 0..cells {
                        if (ii + jj) % 2 == 0 {
                            if seen == k {
                                i = ii;
                                j = jj;
                                break 'outer;
                            }
                            seen += 1;
                        }
                    }
                }
                let width = 2.0 * scale / cells as f64;
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                [-scale + (i as f64 + u) * width, -scale + (j as f64 + v) * width]
            }
            Toy2DKind::TwoMoons { noise } => {
                let theta = rng.random::<f64>() * PI;
                let upper = rng.random::<bool>();
                let base = if upper {
                    [theta.cos(), theta.sin()]
                } else {
                    [1.0 - theta.cos(), 0.5 - theta.sin()]
                };
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                [base[0] + noise * z0, base[1] + noise * z1]
            }
            Toy2DKind::Rings { radii, noise } => {
                let r = radii[rng.random_range(0..radii.len())];
                let a = rng.random::<f64>() * 2.0 * PI;
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                [r * a.cos() + noise * z0, r * a.sin() + noise * z1]
            }
            Toy2DKind::Glyph { mask, bounds } => loop {
                let p = [
                    bounds.x.0 + rng.random::<f64>() * (bounds.x.1 - bounds.x.0),
                    bounds.y.0 + rng.random::<f64>() * (bounds.y.1 - bounds.y.0),
                ];
                if mask.is_active_at(p, bounds) {
                    break p;
                }
            },
        }
    }

    /// Closed-form log-density, where one exists.
    pub fn exact_logp(&self, x: Point) -> Option<f64> {
        match &self.kind {
            Toy2DKind::Gaussian { mean, var } => Some(gaussian_log_density(x, *mean, *var)),
            Toy2DKind::GaussianMixture(components) => {
                let terms: Vec<f64> = components
                    .iter()
                    .map(|c| c.weight.ln() + gaussian_log_density(x, c.mean, c.var))
                    .collect();
                Some(log_sum_exp(&terms))
            }
            _ => None,
        }
    }

    /// Entropy estimate `-mean log p(x)` over `n` fresh samples (stream 1).
    pub fn differential_entropy_mc(&self, n: usize) -> Option<Estimate> {
        self.exact_logp([0.0, 0.0])?;
        let xs = self.sample_stream(n, 1).ok()?;
        let neg_logp: Vec<f64> = xs.iter().map(|&x| -self.exact_logp(x).unwrap()).collect();
        Some(Estimate::from_samples(&neg_logp))
    }

    /// True when `x` lies in an active checkerboard cell. `None` for other kinds.
    pub fn in_checkerboard_cell(&self, x: Point) -> Option<bool> {
        let Toy2DKind::Checkerboard { cells, scale } = &self.kind else {
            return None;
        };
        let width = 2.0 * scale / *cells as f64;
        let i = ((x[0] + scale) / width).floor();
        let j = ((x[1] + scale) / width).floor();
        let inside = i >= 0.0 && j >= 0.0 && (i as usize) < *cells && (j as usize) < *cells;
        Some(inside && (i as usize + j as usize) % 2 == 0)
    }
}

fn pick_component(components: &[MixtureComponent], u: f64) -> &MixtureComponent {
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        if u < acc {
            return c;
        }
    }
    components.last().unwrap()
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_sample_mean() {
        let n = 100_000;
        let xs = Toy2D::gaussian([0.0, 0.0], 1.0, 3).unwrap().sample(n).unwrap();
        for k in 0..2 {
            let mean = xs.iter().map(|x| x[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "{mean}");
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let d = Toy2D::new(Toy2DKind::TwoMoons { noise: 0.1 }, 17).unwrap();
        let a = d.sample(50).unwrap();
        let b = d.sample(50).unwrap();
        let bits = |v: &[Point]| v.iter().flat_map(|p| p.map(f64::to_bits)).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&d.with_seed(18).sample(50).unwrap()));
        assert_ne!(bits(&a), bits(&d.sample_stream(50, 1).unwrap()));
    }

    #[test]
    fn mixture_occupancy_is_multinomial() {
        let (k, n) = (8, 80_000);
        let d = Toy2D::ring_mixture(k, 4.0, 0.01, 5).unwrap();
        let Toy2DKind::GaussianMixture(comps) = &d.kind else { unreachable!() };
        let mut counts = vec![0usize; k];
        for x in d.sample(n).unwrap() {
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    let da = (x[0] - comps[a].mean[0]).hypot(x[1] - comps[a].mean[1]);
                    let db = (x[0] - comps[b].mean[0]).hypot(x[1] - comps[b].mean[1]);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            counts[nearest] += 1;
        }
        let p = 1.0 / k as f64;
        let expected = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 4.0 * sd, "{c} vs {expected}±{sd}");
        }
    }

    #[test]
    fn checkerboard_support() {
        let d = Toy2D::new(Toy2DKind::Checkerboard { cells: 4, scale: 2.0 }, 1).unwrap();
        for x in d.sample(10_000).unwrap() {
            assert_eq!(d.in_checkerboard_cell(x), Some(true), "{x:?}");
        }
        assert_eq!(d.in_checkerboard_cell([-1.9, -1.9]), Some(true));
        assert_eq!(d.in_checkerboard_cell([-1.9, -0.9]), Some(false));
        assert_eq!(d.exact_logp([0.0, 0.0]), None);
        assert!(d.differential_entropy_mc(10).is_none());
    }

    #[test]
    fn rings_and_moons_are_finite() {
        let r = Toy2D::new(Toy2DKind::Rings { radii: vec![1.0, 3.0], noise: 0.0 }, 2).unwrap();
        for x in r.sample(1000).unwrap() {
            let rad = x[0].hypot(x[1]);
            assert!((rad - 1.0).abs() < 1e-12 || (rad - 3.0).abs() < 1e-12);
        }
        let m = Toy2D::new(Toy2DKind::TwoMoons { noise: 0.0 }, 2).unwrap();
        for x in m.sample(1000).unwrap() {
            let upper = (x[0].hypot(x[1]) - 1.0).abs() < 1e-12;
            let lower = ((x[0] - 1.0).hypot(x[1] - 0.5) - 1.0).abs() < 1e-12;
            assert!(upper || lower, "{x:?}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let comps = vec![
            MixtureComponent { weight: 0.5, mean: [0.0, 0.0], var: 1.0 },
            MixtureComponent { weight: 0.6, mean: [1.0, 0.0], var: 1.0 },
        ];
        match Toy2D::new(Toy2DKind::GaussianMixture(comps), 0) {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "weights"),
            other => panic!("{other:?}"),
        }
        assert!(Toy2D::gaussian([0.0, 0.0], 0.0, 0).is_err());
        assert!(Toy2D::gaussian([0.0, 0.0], 1.0, 0).unwrap().sample(0).is_err());
    }

    #[test]
    fn standard_normal_logp_at_origin() {
        let d = Toy2D::gaussian([0.0, 0.0], 1.0, 0).unwrap();
        assert!((d.exact_logp([0.0, 0.0]).unwrap() + (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn mixture_logp_matches_hand_log_sum_exp() {
        let comps = vec![
            MixtureComponent { weight: 0.25, mean: [0.0, 0.0], var: 1.0 },
            MixtureComponent { weight: 0.75, mean: [3.0, 0.0], var: 1.0 },
        ];
        let d = Toy2D::new(Toy2DKind::GaussianMixture(comps), 0).unwrap();
        let x = [10.0, 1.0];
        // Component terms by hand: log w - log(2π v) - |x-m|²/(2v)
        let a = 0.25f64.ln() - (2.0 * PI).ln() - (100.0 + 1.0) / 2.0;
        let b = 0.75f64.ln() - (2.0 * PI).ln() - (49.0 + 1.0) / 2.0;
        let hand = b + (1.0 + (a - b).exp()).ln();
        let got = d.exact_logp(x).unwrap();
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
        // The far point is dominated by the nearest component.
        assert!((got - b).abs() < 1e-10);
    }

    #[test]
    fn gaussian_entropy_matches_closed_form() {
        let v = 0.3;
        let d = Toy2D::gaussian([1.0, -1.0], v, 9).unwrap();
        let e = d.differential_entropy_mc(200_000).unwrap();
        let exact = (2.0 * PI * std::f64::consts::E * v).ln();
        assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{} vs {exact}", e.mean);
        let small = d.differential_entropy_mc(2_000).unwrap();
        let ratio = small.stderr / e.stderr;
        assert!((ratio - 10.0).abs() < 1.5, "{ratio}");
    }

    #[test]
    fn mixture_entropy_within_component_bounds() {
        let d = Toy2D::ring_mixture(8, 4.0, 0.25, 4).unwrap();
        let e = d.differential_entropy_mc(50_000).unwrap();
        let h_comp = (2.0 * PI * std::f64::consts::E * 0.25).ln();
        assert!(e.mean >= h_comp - 4.0 * e.stderr);
        assert!(e.mean <= h_comp + (8.0f64).ln() + 4.0 * e.stderr);
    }

    #[test]
    fn densities_are_normalized() {
        // Importance sampling against N(0, 16 I).
        let proposal = Toy2D::gaussian([0.0, 0.0], 16.0, 12).unwrap();
        let xs = proposal.sample(200_000).unwrap();
        for d in [
            Toy2D::gaussian([1.0, 0.5], 0.7, 0).unwrap(),
            Toy2D::ring_mixture(8, 4.0, 0.25, 0).unwrap(),
        ] {
            let w: Vec<f64> = xs
                .iter()
                .map(|&x| (d.exact_logp(x).unwrap() - proposal.exact_logp(x).unwrap()).exp())
                .collect();
            let mass = w.iter().sum::<f64>() / w.len() as f64;
            assert!((mass - 1.0).abs() < 0.02, "{mass}");
        }
    }
}
