//! Closed-form forward diffusion.
//!
//! The forward process is the variance-preserving SDE
//! `dx = -b(t)/2 x dt + sqrt(b(t)) dw` on `t ∈ [0, 1]`, whose conditional
//! marginals are `N(μ_t x0, σ_t² I)` with `μ_t = exp(-B(t)/2)`,
//! `σ_t = sqrt(1 - exp(-B(t)))` and `B(t) = ∫₀ᵗ b(s) ds`.

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `b(t) = c·t`.
    Linear,
}

/// Noise rate `b(t)` of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            kind: ScheduleKind::Linear,
            c: 10.0,
        }
    }
}

/// Mean scale and noise level of the forward marginal at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mu: f64,
    pub sigma: f64,
}

impl Schedule {
    pub fn linear(c: f64) -> Result<Self> {
        // c = 0 is allowed: it freezes the process and is a useful degenerate case.
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::invalid("schedule.c", format!("must be finite and >= 0, got {c}")));
        }
        Ok(Schedule {
            kind: ScheduleKind::Linear,
            c,
        })
    }

    /// The rate `b(t)`.
    pub fn beta(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => self.c * t,
        }
    }

    /// `B(t) = ∫₀ᵗ b(s) ds`, exact.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 0.5 * self.c * t * t,
        }
    }

    /// Marginal moments at `t ∈ [0, 1]`.
    pub fn marginal(&self, t: f64) -> Result<Marginal> {
        check_unit_time(t)?;
        Ok(self.moments(t))
    }

    /// Marginal moments without the range check. Used by analytic fields that
    /// finite-difference slightly past the ends of the interval.
    pub(crate) fn moments(&self, t: f64) -> Marginal {
        let big_b = self.integrated_beta(t);
        Marginal {
            mu: (-0.5 * big_b).exp(),
            sigma: (-(-big_b).exp_m1()).sqrt(),
        }
    }
}

fn check_unit_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain { t, lo: 0.0, hi: 1.0 })
    }
}

/// Draws `x_t = μ_t x0 + σ_t ε` for a caller-supplied standard normal `eps`.
pub fn forward_sample(sched: &Schedule, x0: Point, t: f64, eps: Point) -> Result<Point> {
    let m = sched.marginal(t)?;
    Ok([m.mu * x0[0] + m.sigma * eps[0], m.mu * x0[1] + m.sigma * eps[1]])
}

/// Score regression target `-ε/σ_t`. A noise-predicting network regresses
/// onto `eps` itself; see [`noise_target`].
pub fn score_target(sigma: f64, eps: Point) -> Result<Point> {
    if !(sigma > 0.0) {
        return Err(Error::Singular { sigma });
    }
    Ok([-eps[0] / sigma, -eps[1] / sigma])
}

/// Noise-prediction target: the injected noise.
pub fn noise_target(eps: Point) -> Point {
    eps
}

/// Isotropic Gaussian data distribution `N(mean, var·I)`; its diffused score
/// is available in closed form and serves as a test oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracle {
    pub mean: Point,
    pub var: f64,
}

impl GaussianOracle {
    pub fn new(mean: Point, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::invalid("var", format!("must be positive, got {var}")));
        }
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::invalid("mean", "must be finite"));
        }
        Ok(GaussianOracle { mean, var })
    }

    pub fn standard() -> Self {
        GaussianOracle {
            mean: [0.0, 0.0],
            var: 1.0,
        }
    }

    /// Mean and isotropic variance of the diffused marginal at `t`.
    pub fn diffused(&self, sched: &Schedule, t: f64) -> (Point, f64) {
        let m = sched.moments(t);
        let var = self.var * m.mu * m.mu + m.sigma * m.sigma;
        ([self.mean[0] * m.mu, self.mean[1] * m.mu], var)
    }

    /// `∇ₓ log p_t(x)`.
    pub fn score(&self, sched: &Schedule, x: Point, t: f64) -> Point {
        let (mean, var) = self.diffused(sched, t);
        [-(x[0] - mean[0]) / var, -(x[1] - mean[1]) / var]
    }

    /// `log p_t(x)`.
    pub fn log_density(&self, sched: &Schedule, x: Point, t: f64) -> f64 {
        let (mean, var) = self.diffused(sched, t);
        gaussian_log_density(x, mean, var)
    }
}

/// Alias for [`GaussianOracle::score`].
pub fn gaussian_score(oracle: &GaussianOracle, sched: &Schedule, x: Point, t: f64) -> Point {
    oracle.score(sched, x, t)
}

/// `log N(x; mean, var·I)` in two dimensions.
pub fn gaussian_log_density(x: Point, mean: Point, var: f64) -> f64 {
    let d0 = x[0] - mean[0];
    let d1 = x[1] - mean[1];
    -(2.0 * std::f64::consts::PI * var).ln() - 0.5 * (d0 * d0 + d1 * d1) / var
}

/// Residual of the score evolution equation at `(x, t)`, by central finite
/// differences with step `h`.
///
/// A score field `s = ∇ log p_t` transported by the forward diffusion obeys
///
/// ```text
/// ∂s/∂t = ½b ∇ₓ tr(∂s/∂x) + ½b (∂s/∂x)(x + s) + ½b (s + (∂s/∂x) s)
/// ```
///
/// which follows from the continuity equation of the probability-flow ODE,
/// `∂ₜ log p = ½b (D + ∇·s + x·s + |s|²)`, after taking the spatial gradient.
/// The last group vanishes for the standard normal but not in general.
/// Returns the Euclidean norm of `lhs - rhs`.
pub fn score_pde_residual<F>(scorefield: F, sched: &Schedule, x: Point, t: f64, h: f64) -> f64
where
    F: Fn(Point, f64) -> Point,
{
    let s = scorefield(x, t);
    let shift = |dx: f64, dy: f64| [x[0] + dx, x[1] + dy];

    let s_tp = scorefield(x, t + h);
    let s_tm = scorefield(x, t - h);
    let ds_dt = [(s_tp[0] - s_tm[0]) / (2.0 * h), (s_tp[1] - s_tm[1]) / (2.0 * h)];

    // jac[i][j] = ∂s_i/∂x_j
    let s_xp = [scorefield(shift(h, 0.0), t), scorefield(shift(0.0, h), t)];
    let s_xm = [scorefield(shift(-h, 0.0), t), scorefield(shift(0.0, -h), t)];
    let mut jac = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            jac[i][j] = (s_xp[j][i] - s_xm[j][i]) / (2.0 * h);
        }
    }

    // ∂/∂x_k tr J = Σ_i ∂²s_i/∂x_i∂x_k
    let second_same = |i: usize| (s_xp[i][i] - 2.0 * s[i] + s_xm[i][i]) / (h * h);
    let mixed = |i: usize| {
        let pp = scorefield(shift(h, h), t)[i];
        let pm = scorefield(shift(h, -h), t)[i];
        let mp = scorefield(shift(-h, h), t)[i];
        let mm = scorefield(shift(-h, -h), t)[i];
        (pp - pm - mp + mm) / (4.0 * h * h)
    };
    let (mixed0, mixed1) = (mixed(0), mixed(1));
    let grad_trace = [second_same(0) + mixed1, mixed0 + second_same(1)];

    let half_b = 0.5 * sched.beta(t);
    let mut norm_sq = 0.0;
    for i in 0..2 {
        let transport = jac[i][0] * (x[0] + s[0]) + jac[i][1] * (x[1] + s[1]);
        let source = s[i] + jac[i][0] * s[0] + jac[i][1] * s[1];
        let r = ds_dt[i] - half_b * (grad_trace[i] + transport + source);
        norm_sq += r * r;
    }
    norm_sq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Composite Simpson quadrature of b, independent of the closed form B(t).
    fn simpson_integrated_beta(sched: &Schedule, t: f64) -> f64 {
        let n = 1000;
        let h = t / n as f64;
        let mut acc = sched.beta(0.0) + sched.beta(t);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * sched.beta(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn marginal_at_zero_is_identity() {
        let m = Schedule::default().marginal(0.0).unwrap();
        assert_eq!(m.mu, 1.0);
        assert_eq!(m.sigma, 0.0);
    }

    #[test]
    fn marginal_matches_quadrature_of_rate() {
        let sched = Schedule::default();
        for &(t, mu, sigma) in &[
            (0.5, (-0.625f64).exp(), (1.0 - (-1.25f64).exp()).sqrt()),
            (1.0, (-2.5f64).exp(), (1.0 - (-5.0f64).exp()).sqrt()),
        ] {
            let big_b = simpson_integrated_beta(&sched, t);
            assert!((big_b - sched.integrated_beta(t)).abs() < 1e-12);
            let m = sched.marginal(t).unwrap();
            assert!((m.mu - mu).abs() < 1e-15);
            assert!((m.sigma - sigma).abs() < 1e-15);
            assert!((m.mu - (-0.5 * big_b).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_rejects_out_of_range_time() {
        let sched = Schedule::default();
        assert!(matches!(sched.marginal(-1e-9), Err(Error::Domain { .. })));
        assert!(matches!(sched.marginal(1.0 + 1e-9), Err(Error::Domain { .. })));
    }

    #[test]
    fn forward_sample_closed_forms() {
        let sched = Schedule::default();
        assert_eq!(forward_sample(&sched, [3.0, -1.0], 0.0, [0.7, 0.2]).unwrap(), [3.0, -1.0]);
        let x = forward_sample(&sched, [1.0, 0.0], 1.0, [0.0, 0.0]).unwrap();
        assert!((x[0] - (-2.5f64).exp()).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn score_target_arithmetic() {
        assert_eq!(score_target(1.0, [0.0, 0.0]).unwrap(), [-0.0, -0.0]);
        assert_eq!(score_target(0.5, [1.0, -2.0]).unwrap(), [-2.0, 4.0]);
        assert!(matches!(score_target(0.0, [1.0, 1.0]), Err(Error::Singular { .. })));
        assert_eq!(noise_target([1.0, -2.0]), [1.0, -2.0]);
    }

    #[test]
    fn standard_normal_is_a_fixed_point() {
        let sched = Schedule::default();
        let o = GaussianOracle::standard();
        for &t in &[0.0, 0.2, 0.77, 1.0] {
            let s = o.score(&sched, [1.5, -0.25], t);
            assert!((s[0] + 1.5).abs() < 1e-15 && (s[1] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_score_at_mode_is_zero() {
        let o = GaussianOracle::new([2.0, 0.0], 0.25).unwrap();
        assert_eq!(o.score(&Schedule::default(), [2.0, 0.0], 0.0), [-0.0, -0.0]);
    }

    #[test]
    fn gaussian_score_matches_log_density_gradient() {
        let sched = Schedule::default();
        let o = GaussianOracle::new([2.0, 0.0], 0.25).unwrap();
        let h = 1e-5;
        for &(x, t) in &[([0.0, 0.0], 0.5), ([1.0, -0.5], 0.1), ([2.5, 1.0], 0.9)] {
            let s = o.score(&sched, x, t);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (o.log_density(&sched, xp, t) - o.log_density(&sched, xm, t)) / (2.0 * h);
                let rel = (fd - s[k]).abs() / s[k].abs().max(1.0);
                assert!(rel <= 1e-6, "x={x:?} t={t} k={k}: fd={fd} s={}", s[k]);
            }
        }
    }

    #[test]
    fn pde_residual_vanishes_for_standard_normal() {
        let sched = Schedule::default();
        let o = GaussianOracle::standard();
        let r = score_pde_residual(|x, t| o.score(&sched, x, t), &sched, [0.3, -1.2], 0.4, 1e-3);
        assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn pde_residual_small_for_diffused_gaussian() {
        let sched = Schedule::default();
        let o = GaussianOracle::new([2.0, 0.0], 0.25).unwrap();
        let r = score_pde_residual(|x, t| o.score(&sched, x, t), &sched, [0.0, 0.0], 0.3, 1e-3);
        assert!(r <= 1e-3, "{r}");
    }

    #[test]
    fn pde_residual_converges_quadratically() {
        let sched = Schedule::default();
        let o = GaussianOracle::new([2.0, 0.0], 0.25).unwrap();
        let f = |x, t| o.score(&sched, x, t);
        let r1 = score_pde_residual(f, &sched, [0.5, 0.5], 0.3, 2e-2);
        let r2 = score_pde_residual(f, &sched, [0.5, 0.5], 0.3, 1e-2);
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio} ({r1} -> {r2})");
    }

    #[test]
    fn pde_residual_flags_a_wrong_field() {
        let sched = Schedule::default();
        let r = score_pde_residual(|x, _| x, &sched, [1.0, 0.5], 0.3, 1e-3);
        assert!(r > 0.1, "{r}");
    }

    #[test]
    fn transport_only_form_misses_the_source_term() {
        // Without the ½b(s + Js) group the diffused N((2,0), 0.25) score
        // leaves an O(1) residual away from its mean.
        let sched = Schedule::default();
        let o = GaussianOracle::new([2.0, 0.0], 0.25).unwrap();
        let (x, t) = ([0.0, 0.0], 0.3);
        let s = o.score(&sched, x, t);
        let (_, var) = o.diffused(&sched, t);
        let jac = -1.0 / var;
        let source = [s[0] + jac * s[0], s[1] + jac * s[1]];
        let half_b = 0.5 * sched.beta(t);
        let missing = half_b * (source[0].hypot(source[1]));
        assert!(missing > 1.0, "{missing}");
    }

    proptest! {
        #[test]
        fn vp_identity_and_monotonicity(t in 0.0f64..1.0, dt in 1e-6f64..1e-2) {
            let sched = Schedule::default();
            let m = sched.marginal(t).unwrap();
            prop_assert!((m.mu * m.mu + m.sigma * m.sigma - 1.0).abs() <= 4.0 * f64::EPSILON);
            prop_assert!(m.mu > 0.0 && m.mu <= 1.0 && m.sigma >= 0.0 && m.sigma < 1.0);
            let t2 = (t + dt).min(1.0);
            if t2 > t {
                let m2 = sched.marginal(t2).unwrap();
                prop_assert!(m2.mu < m.mu);
                prop_assert!(m2.sigma > m.sigma);
            }
        }
    }
}
