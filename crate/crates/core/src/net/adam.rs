use super::{zip_params_mut, MlpParams};
use crate::{Error, Result};

/// Bias-corrected Adam over [`MlpParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    step: u64,
    first: MlpParams,
    second: MlpParams,
}

impl Adam {
    /// Zero moments shaped like `params`; betas 0.9 / 0.999, `eps_hat` 1e-8.
    pub fn new(params: &MlpParams, lr: f64) -> Result<Self> {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &MlpParams, lr: f64, beta1: f64, beta2: f64, eps_hat: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid("lr", format!("must be positive, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {b}")));
            }
        }
        if !(eps_hat >= 0.0) {
            return Err(Error::invalid("eps_hat", "must be non-negative"));
        }
        let mut first = params.clone();
        for l in &mut first.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps_hat,
            step: 0,
            second: first.clone(),
            first,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &MlpParams {
        &self.first
    }

    pub fn second_moment(&self) -> &MlpParams {
        &self.second
    }

    /// One update. Non-finite gradients are rejected before anything changes.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if !params.shape_matches(grads) || !params.shape_matches(&self.first) {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        if let Some(layer) = grads.layers.iter().position(|l| {
            !(l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
        }) {
            return Err(Error::NonFiniteGradient { layer });
        }

        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        zip_params_mut(&mut self.first, grads, |m, g| *m = b1 * *m + (1.0 - b1) * g);
        zip_params_mut(&mut self.second, grads, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);

        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps_hat);
        for ((p, m), v) in params
            .layers
            .iter_mut()
            .zip(&self.first.layers)
            .zip(&self.second.layers)
        {
            ndarray::Zip::from(&mut p.weight)
                .and(&m.weight)
                .and(&v.weight)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
            ndarray::Zip::from(&mut p.bias)
                .and(&m.bias)
                .and(&v.bias)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MlpSpec;

    fn scalar_params(value: f64) -> MlpParams {
        let spec = MlpSpec::new(vec![1, 1], false).unwrap();
        let mut p = MlpParams::zeros(&spec);
        p.layers[0].weight[[0, 0]] = value;
        p
    }

    #[test]
    fn zero_gradients_leave_params_and_decay_moments() {
        let mut params = scalar_params(0.5);
        let mut adam = Adam::new(&params, 1e-3).unwrap();
        adam.step(&mut params, &scalar_params(0.0)).unwrap();
        assert_eq!(params, scalar_params(0.5));

        adam.step(&mut params, &scalar_params(1.0)).unwrap();
        let m1 = adam.first_moment().layers[0].weight[[0, 0]];
        let v1 = adam.second_moment().layers[0].weight[[0, 0]];
        adam.step(&mut params, &scalar_params(0.0)).unwrap();
        assert_eq!(adam.first_moment().layers[0].weight[[0, 0]], 0.9 * m1);
        assert_eq!(adam.second_moment().layers[0].weight[[0, 0]], 0.999 * v1);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let spec = MlpSpec::new(vec![2, 3], false).unwrap();
        let mut params = MlpParams::init(&spec, 1);
        let start = params.clone();
        let mut grads = MlpParams::init(&spec, 2);
        grads.layers[0].bias[1] = -0.25;
        let lr = 1e-3;
        let mut adam = Adam::new(&params, lr).unwrap();
        adam.step(&mut params, &grads).unwrap();
        for ((p, p0), g) in params.iter().zip(start.iter()).zip(grads.iter()) {
            let expected = p0 - lr * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
    }

    #[test]
    fn matches_hand_trace() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let grads = [2.0, -1.0, 0.5];

        // Hand-executed trace.
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
            expected.push(theta);
        }
        // First step moves by lr·sign(g) up to eps.
        assert!((expected[0] - 0.9).abs() < 1e-8);

        let mut params = scalar_params(1.0);
        let mut adam = Adam::with_betas(&params, lr, b1, b2, eps).unwrap();
        for (g, want) in grads.iter().zip(&expected) {
            adam.step(&mut params, &scalar_params(*g)).unwrap();
            assert!((params.layers[0].weight[[0, 0]] - want).abs() < 1e-15);
        }
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut params = scalar_params(1.0);
        let mut adam = Adam::new(&params, 1e-3).unwrap();
        let err = adam.step(&mut params, &scalar_params(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 0 }));
        assert_eq!(params, scalar_params(1.0));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let p = scalar_params(0.0);
        assert!(Adam::new(&p, 0.0).is_err());
        assert!(Adam::with_betas(&p, 1e-3, 1.0, 0.999, 1e-8).is_err());
    }
}
