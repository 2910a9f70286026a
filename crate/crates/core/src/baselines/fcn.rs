//! Unconstrained fully-connected network over all markers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::model::LatentTrace;
use crate::net::{Mlp, MlpCache, SubnetSpec};
use crate::seed;
use crate::training::{train, TrainConfig, Trainable, TrainingData, TrainingHistory};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    spec: SubnetSpec,
    mlp: Mlp,
    params: Vec<f64>,
    seed: u64,
}

impl DenseNetwork {
    pub fn new(n_inputs: usize, spec: SubnetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        if spec.hidden_layer_widths.is_empty() {
            return Err(BinnError::InvalidConfig("FCN needs at least one hidden layer".into()));
        }
        if spec.output_width != 1 {
            return Err(BinnError::InvalidConfig("FCN predicts a scalar phenotype".into()));
        }
        let mlp = Mlp::new(&spec, n_inputs, 0);
        let mut params = vec![0.0; mlp.n_params()];
        mlp.init(&mut params, &mut seed::rng(seed, "fcn-init", &[]));
        Ok(Self {
            spec,
            mlp,
            params,
            seed,
        })
    }

    /// Picks the first hidden width so the parameter count is as close as
    /// possible to `budget`; the remaining layers keep the template's widths.
    pub fn budget_matched(n_inputs: usize, template: &SubnetSpec, budget: usize, seed: u64) -> Result<Self> {
        let spec = solve_widths(n_inputs, template, budget)?;
        Self::new(n_inputs, spec, seed)
    }

    pub fn spec(&self) -> &SubnetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_inputs(&self) -> usize {
        self.mlp.fan_in()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(BinnError::ShapeMismatch(format!(
                "FCN has {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_inputs() {
            return Err(BinnError::DimensionMismatch(format!(
                "FCN expects {} inputs, got {}",
                self.n_inputs(),
                x.ncols()
            )));
        }
        Ok(self.mlp.forward(&self.params, x.to_owned()).output().column(0).to_owned())
    }

    /// Gradients of `sum_i upstream[i] * prediction[i]`.
    pub fn backward(&self, x: ArrayView2<f64>, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != x.nrows() {
            return Err(BinnError::ShapeMismatch("upstream gradient length".into()));
        }
        let (_, cache) = self.forward_train(x);
        Ok(self.backward_train(&cache, ArrayView1::from(upstream), None))
    }
}

pub fn solve_widths(n_inputs: usize, template: &SubnetSpec, budget: usize) -> Result<SubnetSpec> {
    if template.hidden_layer_widths.is_empty() {
        return Err(BinnError::InvalidConfig("FCN needs at least one hidden layer".into()));
    }
    let count = |w: usize| {
        let mut s = template.clone();
        s.fan_in_scaled = false;
        s.hidden_layer_widths[0] = w;
        s.param_count(n_inputs)
    };
    // Parameter count is increasing in the first width.
    let mut hi = 1;
    while count(hi) < budget {
        hi *= 2;
    }
    let best = (1..=hi)
        .min_by_key(|&w| (count(w) as i64 - budget as i64).unsigned_abs())
        .unwrap();
    let mut spec = template.clone();
    spec.fan_in_scaled = false;
    spec.hidden_layer_widths[0] = best;
    Ok(spec)
}

impl Trainable for DenseNetwork {
    type Cache = MlpCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_train(&self, x: ArrayView2<f64>) -> (LatentTrace, MlpCache) {
        let cache = self.mlp.forward(&self.params, x.to_owned());
        let trace = LatentTrace {
            per_layer_latents: Vec::new(),
            residual_output: Array2::zeros((x.nrows(), 0)),
            prediction: cache.output().column(0).to_owned(),
        };
        (trace, cache)
    }

    fn backward_train(
        &self,
        cache: &MlpCache,
        d_prediction: ArrayView1<f64>,
        _d_latents: Option<&[Array2<f64>]>,
    ) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        let d = d_prediction.to_owned().insert_axis(ndarray::Axis(1));
        self.mlp.backward(&self.params, cache, d, &mut grads, false);
        grads
    }
}

/// Trains a dense network with the shared optimizer and early stopping.
pub fn fcn_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: SubnetSpec,
    config: &TrainConfig,
    validation: Option<(ArrayView2<f64>, ArrayView1<f64>)>,
) -> Result<(DenseNetwork, TrainingHistory)> {
    let mut net = DenseNetwork::new(x.ncols(), spec, config.seed)?;
    let data = TrainingData::new(x, y, None);
    let val = validation.map(|(vx, vy)| TrainingData::new(vx, vy, None));
    let history = train(&mut net, &data, val.as_ref(), config)?;
    Ok((net, history))
}

/// Serialized form; `params` follows the layer layout of [`Mlp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub n_inputs: usize,
    pub spec: SubnetSpec,
    pub params: Vec<f64>,
    pub seed: u64,
}

impl DenseNetwork {
    pub fn to_record(&self) -> DenseRecord {
        DenseRecord {
            n_inputs: self.n_inputs(),
            spec: self.spec.clone(),
            params: self.params.clone(),
            seed: self.seed,
        }
    }

    pub fn from_record(rec: DenseRecord) -> Result<Self> {
        let mut net = Self::new(rec.n_inputs, rec.spec, rec.seed)?;
        net.set_params(rec.params)?;
        Ok(net)
    }
}
