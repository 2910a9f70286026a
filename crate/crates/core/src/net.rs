//! Small dense feed-forward networks evaluated over a flat parameter buffer.
//!
//! Every subnetwork owns a contiguous slice `[offset, offset + n_params)` of
//! its parent's parameter vector. Within that slice each layer stores its
//! weights row-major as `fan_in x fan_out`, followed by `fan_out` biases.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    #[default]
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Sigmoid {
            z.mapv_inplace(sigmoid);
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the
    /// activation output `a`.
    fn backprop(self, a: &Array2<f64>, grad: &mut Array2<f64>) {
        if self == Activation::Sigmoid {
            ndarray::Zip::from(grad).and(a).for_each(|g, &s| *g *= s * (1.0 - s));
        }
    }
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Shape of a subnetwork. `activation` applies to hidden layers and
/// `output_activation` to the last layer. With `fan_in_scaled`, each hidden
/// width becomes `min(width, ceil(fan_in / 2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub hidden_layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_width: usize,
    #[serde(default)]
    pub output_activation: Activation,
    #[serde(default)]
    pub fan_in_scaled: bool,
}

impl SubnetSpec {
    /// One sigmoid hidden layer of width `min(8, ceil(fan_in/2))`, scalar output.
    pub fn pathway_default() -> Self {
        Self {
            hidden_layer_widths: vec![8],
            activation: Activation::Sigmoid,
            output_width: 1,
            output_activation: Activation::Identity,
            fan_in_scaled: true,
        }
    }

    pub fn integrator_default() -> Self {
        Self {
            hidden_layer_widths: vec![16],
            activation: Activation::Sigmoid,
            output_width: 1,
            output_activation: Activation::Identity,
            fan_in_scaled: false,
        }
    }

    /// Scalar residual phenotype with the same hidden shape as a pathway.
    pub fn residual_default() -> Self {
        Self::pathway_default()
    }

    /// A single affine map with no hidden layer.
    pub fn linear(output_width: usize) -> Self {
        Self {
            hidden_layer_widths: Vec::new(),
            activation: Activation::Identity,
            output_width,
            output_activation: Activation::Identity,
            fan_in_scaled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_width == 0 {
            return Err(BinnError::InvalidConfig("output width must be positive".into()));
        }
        if self.hidden_layer_widths.contains(&0) {
            return Err(BinnError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Layer sizes `[fan_in, h_1, .., h_m, output]` for a concrete fan-in.
    pub fn layer_sizes(&self, fan_in: usize) -> Vec<usize> {
        let cap = fan_in.div_ceil(2).max(1);
        let mut sizes = Vec::with_capacity(self.hidden_layer_widths.len() + 2);
        sizes.push(fan_in);
        for &w in &self.hidden_layer_widths {
            sizes.push(if self.fan_in_scaled { w.min(cap) } else { w });
        }
        sizes.push(self.output_width);
        sizes
    }

    pub fn param_count(&self, fan_in: usize) -> usize {
        count_params(&self.layer_sizes(fan_in))
    }
}

pub fn count_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// A resolved subnetwork: concrete layer sizes plus its parameter offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    offset: usize,
}

/// Post-activation outputs of every layer for one batch; `acts[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    pub fn new(spec: &SubnetSpec, fan_in: usize, offset: usize) -> Self {
        Self {
            sizes: spec.layer_sizes(fan_in),
            hidden: spec.activation,
            output: spec.output_activation,
            offset,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn fan_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn n_params(&self) -> usize {
        count_params(&self.sizes)
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_params()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Offsets of (weights, biases) of `layer` inside the parent buffer.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = self.offset;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        (off, off + self.sizes[layer] * self.sizes[layer + 1])
    }

    fn weights<'a>(&self, params: &'a [f64], layer: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let (w, b) = self.layer_offsets(layer);
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        let wv = ArrayView2::from_shape((fi, fo), &params[w..w + fi * fo]).expect("layout");
        (wv, &params[b..b + fo])
    }

    /// Scaled-uniform initialization, biases zero.
    pub fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        for layer in 0..self.n_layers() {
            let (w, b) = self.layer_offsets(layer);
            let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            for v in &mut params[w..w + fi * fo] {
                *v = rng.random_range(-bound..bound);
            }
            params[b..b + fo].fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], input: Array2<f64>) -> MlpCache {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input);
        for layer in 0..self.n_layers() {
            let (w, b) = self.weights(params, layer);
            let mut z = acts[layer].dot(&w);
            for mut row in z.rows_mut() {
                for (v, &bias) in row.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            self.activation(layer).apply(&mut z);
            acts.push(z);
        }
        MlpCache { acts }
    }

    /// Accumulates parameter gradients into `grads` (same layout as the
    /// parameter buffer) and returns the gradient w.r.t. the input when asked.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: Array2<f64>,
        grads: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut delta = d_out;
        for layer in (0..self.n_layers()).rev() {
            self.activation(layer).backprop(&cache.acts[layer + 1], &mut delta);
            let (woff, boff) = self.layer_offsets(layer);
            let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
            {
                let mut gw = ArrayViewMut2::from_shape((fi, fo), &mut grads[woff..woff + fi * fo])
                    .expect("layout");
                ndarray::linalg::general_mat_mul(1.0, &cache.acts[layer].t(), &delta, 1.0, &mut gw);
            }
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            for (g, v) in grads[boff..boff + fo].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if layer > 0 || want_input_grad {
                let (w, _) = self.weights(params, layer);
                delta = delta.dot(&w.t());
            } else {
                return None;
            }
        }
        Some(delta)
    }
}
