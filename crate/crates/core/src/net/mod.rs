//! Fully-connected ELU network with exact reverse-mode gradients.
//!
//! Batches are row-major `n × width` matrices. The single-example methods are
//! thin wrappers over the batched ones.

mod adam;
mod codec;

pub use adam::Adam;
pub use codec::{decode, encode, read_checkpoint, write_checkpoint, MAGIC};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, DATA_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z` for `z > 0`, `e^z - 1` otherwise (α = 1).
    #[default]
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }
}

/// Architecture of a network.
///
/// A time-conditioned network takes `[x₁, x₂, t, t]`, the time appended twice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub time_conditioned: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, time_conditioned: bool) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            activation: Activation::Elu,
            time_conditioned,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `in → hidden… → 2` for 2D data, `in` being 4 when time-conditioned.
    pub fn for_2d(hidden: &[usize], time_conditioned: bool) -> Result<Self> {
        let input = if time_conditioned { DATA_DIM + 2 } else { DATA_DIM };
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(DATA_DIM);
        Self::new(widths, time_conditioned)
    }

    /// The `4 → 100 → 150 → 100 → 2` network used for the 2D experiments
    /// (input 2 when not time-conditioned).
    pub fn standard_2d(time_conditioned: bool) -> Self {
        Self::for_2d(&[100, 150, 100], time_conditioned).expect("valid architecture")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::invalid("widths", "need at least input and output widths"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("widths", "every width must be positive"));
        }
        if self.time_conditioned && self.widths[0] < 3 {
            return Err(Error::invalid(
                "widths",
                "a time-conditioned network needs the time appended twice to its data input",
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of leading input coordinates that are data (not time).
    pub fn data_dim(&self) -> usize {
        if self.time_conditioned {
            self.input_dim() - 2
        } else {
            self.input_dim()
        }
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// One affine map: `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of every layer. Also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        MlpParams { layers }
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let bound = (1.0 / layer.weight.ncols() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        params
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() == spec.num_layers()
            && self.layers.iter().zip(spec.widths.windows(2)).all(|(l, w)| {
                l.weight.dim() == (w[1], w[0]) && l.bias.len() == w[1]
            })
    }

    fn shape_matches(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// Flat view in serialization order: per layer, weight rows then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }
}

/// Activations kept from a batched forward pass.
struct Tape {
    /// Layer inputs: `inputs[0]` is the batch, `inputs[l]` the activated
    /// output of layer `l - 1`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: MlpParams,
}

impl Mlp {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        spec.validate()?;
        if !params.matches(&spec) {
            return Err(Error::Shape("parameters do not match the architecture".into()));
        }
        Ok(Mlp { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::init(&spec, seed);
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn into_parts(self) -> (MlpSpec, MlpParams) {
        (self.spec, self.params)
    }

    fn check_batch(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but the network expects {}",
                inputs.ncols(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&inputs)?;
        let act = self.spec.activation;
        let last = self.params.layers.len() - 1;
        let mut a = inputs.to_owned();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if l < last {
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    fn forward_tape(&self, inputs: ArrayView2<f64>) -> Tape {
        let act = self.spec.activation;
        let last = self.params.layers.len() - 1;
        let mut tape_inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        tape_inputs.push(inputs.to_owned());
        let mut output = None;
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut z = tape_inputs[l].dot(&layer.weight.t());
            z += &layer.bias;
            if l < last {
                let a = z.mapv(|v| act.apply(v));
                pre.push(z);
                tape_inputs.push(a);
            } else {
                output = Some(z);
            }
        }
        Tape {
            inputs: tape_inputs,
            pre,
            output: output.expect("at least one layer"),
        }
    }

    /// Reverse pass from the output cotangent `delta`. Returns the input
    /// cotangent; parameter gradients are written into `grads` when given.
    fn reverse(&self, tape: &Tape, mut delta: Array2<f64>, mut grads: Option<&mut MlpParams>) -> Array2<f64> {
        let act = self.spec.activation;
        for l in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[l];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[l];
                gl.weight = delta.t().dot(&tape.inputs[l]);
                gl.bias = delta.sum_axis(Axis(0));
            }
            let mut back = delta.dot(&layer.weight);
            if l > 0 {
                Zip::from(&mut back)
                    .and(&tape.pre[l - 1])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            delta = back;
        }
        delta
    }

    /// Gradients of `⟨upstream, forward(input)⟩` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let u = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (grads, input_grad) = self.backward_batch(x, u)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// Batched [`Mlp::backward`]: parameter gradients are summed over rows,
    /// input gradients are per row.
    pub fn backward_batch(
        &self,
        inputs: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> Result<(MlpParams, Array2<f64>)> {
        self.check_batch(&inputs)?;
        self.check_upstream(&inputs, &upstream)?;
        let tape = self.forward_tape(inputs);
        let mut grads = MlpParams::zeros(&self.spec);
        let input_grad = self.reverse(&tape, upstream.to_owned(), Some(&mut grads));
        Ok((grads, input_grad))
    }

    fn check_upstream(&self, inputs: &ArrayView2<f64>, upstream: &ArrayView2<f64>) -> Result<()> {
        if upstream.dim() != (inputs.nrows(), self.spec.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream is {:?} but outputs are {:?}",
                upstream.dim(),
                (inputs.nrows(), self.spec.output_dim())
            )));
        }
        Ok(())
    }

    /// Mean squared error `mean_rows ‖forward(x) - target‖²` and its
    /// parameter gradient.
    pub fn mse_loss_and_grad(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, MlpParams)> {
        self.check_batch(&inputs)?;
        self.check_upstream(&inputs, &targets)?;
        let n = inputs.nrows().max(1) as f64;
        let tape = self.forward_tape(inputs);
        let residual = &tape.output - &targets;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
        let delta = residual * (2.0 / n);
        let mut grads = MlpParams::zeros(&self.spec);
        self.reverse(&tape, delta, Some(&mut grads));
        Ok((loss, grads))
    }

    /// `mean_rows ‖forward(x) - target‖²` without gradients.
    pub fn mse_loss(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward_batch(inputs)?;
        self.check_upstream(&inputs, &targets)?;
        let n = inputs.nrows().max(1) as f64;
        Ok((&out - &targets).iter().map(|r| r * r).sum::<f64>() / n)
    }

    /// `tr ∂output/∂x_data`, exact, from one reverse pass per data coordinate.
    pub fn input_jacobian_trace(&self, input: &[f64]) -> Result<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.input_jacobian_trace_batch(x)?[0])
    }

    /// Outputs and per-row Jacobian traces over the data coordinates.
    pub fn forward_with_trace_batch(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(&inputs)?;
        let d = self.spec.data_dim();
        if self.spec.output_dim() != d {
            return Err(Error::Shape(format!(
                "Jacobian trace needs output dim == data dim, got {} vs {d}",
                self.spec.output_dim()
            )));
        }
        let n = inputs.nrows();
        let tape = self.forward_tape(inputs);
        let mut trace = Array1::zeros(n);
        for k in 0..d {
            let mut basis = Array2::zeros((n, d));
            basis.column_mut(k).fill(1.0);
            let grad = self.reverse(&tape, basis, None);
            trace += &grad.column(k);
        }
        Ok((tape.output, trace))
    }

    pub fn input_jacobian_trace_batch(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_with_trace_batch(inputs)?.1)
    }
}

/// Applies `f` to each parameter/gradient pair in serialization order.
pub(crate) fn zip_params_mut(
    params: &mut MlpParams,
    other: &MlpParams,
    mut f: impl FnMut(&mut f64, f64),
) {
    for (p, o) in params.layers.iter_mut().zip(&other.layers) {
        Zip::from(&mut p.weight).and(&o.weight).for_each(|a, &b| f(a, b));
        Zip::from(&mut p.bias).and(&o.bias).for_each(|a, &b| f(a, b));
    }
}
