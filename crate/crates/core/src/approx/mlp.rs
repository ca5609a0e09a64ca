use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

/// One affine map `x·W + b`; `weights` is `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Affine layers with rectified-linear hidden units and a selectable output
/// activation. Batches are row-major: one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: Activation,
}

/// Forward-pass record needed by [`Mlp::backward`].
#[derive(Debug)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    /// Output layer before its activation.
    pub fn output_pre(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Uniform fan-in initialization `U(−1/√fan_in, 1/√fan_in)` for weights
    /// and biases.
    pub fn new(layer_sizes: &[usize], output: Activation, rng: &mut Rng) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn zeros(layer_sizes: &[usize], output: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn from_layers(layers: Vec<Layer>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::shape(
                    "layer chain",
                    pair[0].weights.ncols(),
                    pair[1].weights.nrows(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::shape("bias", l.weights.ncols(), l.bias.len()));
            }
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut x = self.affine(0, input);
        for l in 0..=last {
            if l > 0 {
                x = self.affine(l, x.view());
            }
            if l < last {
                x.mapv_inplace(relu);
            }
        }
        if self.output == Activation::Tanh {
            x.mapv_inplace(f64::tanh);
        }
        Ok(x)
    }

    pub fn forward_tape(&self, input: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for l in 0..=last {
            let z = self.affine(l, x.view());
            inputs.push(x);
            x = if l < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        if self.output == Activation::Tanh {
            x.mapv_inplace(f64::tanh);
        }
        Ok(Tape {
            inputs,
            pre,
            output: x,
        })
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the
    /// network input, given `upstream = ∂L/∂output`.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::shape(
                "upstream gradient",
                tape.output.len(),
                upstream.len(),
            ));
        }
        let dz = match self.output {
            Activation::Identity => upstream.to_owned(),
            Activation::Tanh => &upstream * &tape.output.mapv(|y| 1.0 - y * y),
        };
        self.backward_from_pre(tape, dz)
    }

    /// Same as [`Mlp::backward`] but seeded with `∂L/∂z` for the output
    /// pre-activation `z`.
    pub fn backward_from_pre(
        &self,
        tape: &Tape,
        mut dz: Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if dz.dim() != tape.output.dim() {
            return Err(Error::shape(
                "pre-activation gradient",
                tape.output.len(),
                dz.len(),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dx = Array2::zeros((0, 0));
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let dw = tape.inputs[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            dx = dz.dot(&layer.weights.t());
            grads.push((dw, db));
            if l > 0 {
                let mask = &tape.pre[l - 1];
                ndarray::Zip::from(&mut dx).and(mask).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = dx.clone();
            }
        }
        grads.reverse();
        if !dx.is_standard_layout() {
            dx = dx.as_standard_layout().into_owned();
        }
        Ok((Gradients { layers: grads }, dx))
    }

    /// `target ← factor·target + (1 − factor)·online`, elementwise.
    pub fn polyak_update(&mut self, online: &Mlp, factor: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(Error::Config(format!(
                "polyak factor {factor} outside [0, 1]"
            )));
        }
        if self.layer_sizes() != online.layer_sizes() {
            return Err(Error::shape(
                "polyak parameters",
                self.num_params(),
                online.num_params(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weights
                .zip_mut_with(&o.weights, |t, &o| *t = factor * *t + (1.0 - factor) * o);
            t.bias
                .zip_mut_with(&o.bias, |t, &o| *t = factor * *t + (1.0 - factor) * o);
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape(
                "flat parameters",
                self.num_params(),
                values.len(),
            ));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    fn affine(&self, l: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[l];
        let mut z = x.dot(&layer.weights);
        z += &layer.bias;
        z
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), got));
        }
        Ok(())
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}
