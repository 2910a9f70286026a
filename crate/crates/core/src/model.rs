//! Pathway-constrained network: masked subnetworks per biological entity,
//! a residual network over unannotated markers, and a final integrator.
//!
//! Each pathway subnet only ever sees the inputs in its mask column; there
//! are no dense weight matrices with zeroed entries, so masked connections
//! have no parameters and no gradients.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::mask::{LayerMask, MaskRecord};
use crate::net::{Mlp, MlpCache, SubnetSpec};
use crate::seed;

/// Latent activations captured during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrace {
    /// `n x k_l` per omics layer.
    pub per_layer_latents: Vec<Array2<f64>>,
    /// `n x h_r`; zero columns when the model has no residual net.
    pub residual_output: Array2<f64>,
    pub prediction: Array1<f64>,
}

/// Fixes one latent to a constant for every sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clamp {
    /// Zero-based layer position (mask `l` has position `l - 1`).
    pub layer: usize,
    pub entity: usize,
    pub value: f64,
}

/// Gradients laid out exactly like the model's parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradients {
    pub values: Vec<f64>,
}

impl ParameterGradients {
    pub fn slice(&self, range: std::ops::Range<usize>) -> &[f64] {
        &self.values[range]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediate state retained for backpropagation.
pub struct ForwardCache {
    layers: Vec<Vec<MlpCache>>,
    residual: Option<MlpCache>,
    integrator: MlpCache,
    clamp: Option<Clamp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinnModel {
    masks: Vec<LayerMask>,
    subnet_spec: SubnetSpec,
    residual_spec: SubnetSpec,
    integrator_spec: SubnetSpec,
    pathways: Vec<Vec<Mlp>>,
    residual: Option<Mlp>,
    integrator: Mlp,
    residual_marker_index: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
}

fn build_layout(
    masks: &[LayerMask],
    subnet_spec: &SubnetSpec,
    residual_spec: &SubnetSpec,
    integrator_spec: &SubnetSpec,
) -> Result<(Vec<Vec<Mlp>>, Option<Mlp>, Mlp, Vec<usize>, usize)> {
    if masks.is_empty() {
        return Err(BinnError::DimensionMismatch("at least one mask is required".into()));
    }
    subnet_spec.validate()?;
    residual_spec.validate()?;
    integrator_spec.validate()?;
    if subnet_spec.output_width != 1 {
        return Err(BinnError::InvalidConfig(
            "pathway subnets emit one latent per sample".into(),
        ));
    }
    if integrator_spec.output_width != 1 {
        return Err(BinnError::InvalidConfig("integrator emits a scalar phenotype".into()));
    }
    for (l, pair) in masks.windows(2).enumerate() {
        if pair[0].n_entities() != pair[1].n_inputs()
            || pair[0].entity_ids() != pair[1].input_feature_ids()
        {
            return Err(BinnError::DimensionMismatch(format!(
                "layer {} emits {} entities but layer {} expects {} inputs",
                l + 1,
                pair[0].n_entities(),
                l + 2,
                pair[1].n_inputs()
            )));
        }
    }
    for (l, m) in masks.iter().enumerate() {
        if m.layer_index() != l + 1 {
            return Err(BinnError::DimensionMismatch(format!(
                "mask at position {l} has layer index {}",
                m.layer_index()
            )));
        }
    }
    let mut offset = 0;
    let mut pathways = Vec::with_capacity(masks.len());
    for m in masks {
        let mut layer = Vec::with_capacity(m.n_entities());
        for j in 0..m.n_entities() {
            let mlp = Mlp::new(subnet_spec, m.support(j).len(), offset);
            offset += mlp.n_params();
            layer.push(mlp);
        }
        pathways.push(layer);
    }
    let residual_marker_index = masks[0].unannotated_inputs();
    let residual = if residual_marker_index.is_empty() {
        None
    } else {
        let mlp = Mlp::new(residual_spec, residual_marker_index.len(), offset);
        offset += mlp.n_params();
        Some(mlp)
    };
    let h_r = residual.as_ref().map_or(0, Mlp::fan_out);
    let integrator = Mlp::new(integrator_spec, masks.last().unwrap().n_entities() + h_r, offset);
    offset += integrator.n_params();
    Ok((pathways, residual, integrator, residual_marker_index, offset))
}

impl BinnModel {
    /// Builds and initializes a model. Initialization depends only on `seed`.
    pub fn build(
        masks: Vec<LayerMask>,
        subnet_spec: SubnetSpec,
        residual_spec: SubnetSpec,
        integrator_spec: SubnetSpec,
        seed: u64,
    ) -> Result<Self> {
        let (pathways, residual, integrator, residual_marker_index, n_params) =
            build_layout(&masks, &subnet_spec, &residual_spec, &integrator_spec)?;
        let mut params = vec![0.0; n_params];
        let mut rng = seed::rng(seed, "binn-init", &[]);
        for mlp in pathways.iter().flatten() {
            mlp.init(&mut params, &mut rng);
        }
        if let Some(r) = &residual {
            r.init(&mut params, &mut rng);
        }
        integrator.init(&mut params, &mut rng);
        Ok(Self {
            masks,
            subnet_spec,
            residual_spec,
            integrator_spec,
            pathways,
            residual,
            integrator,
            residual_marker_index,
            params,
            seed,
        })
    }

    pub fn masks(&self) -> &[LayerMask] {
        &self.masks
    }

    pub fn n_layers(&self) -> usize {
        self.masks.len()
    }

    pub fn n_markers(&self) -> usize {
        self.masks[0].n_inputs()
    }

    pub fn residual_marker_index(&self) -> &[usize] {
        &self.residual_marker_index
    }

    pub fn has_residual(&self) -> bool {
        self.residual.is_some()
    }

    pub fn residual_width(&self) -> usize {
        self.residual.as_ref().map_or(0, Mlp::fan_out)
    }

    pub fn integrator_fan_in(&self) -> usize {
        self.integrator.fan_in()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> (&SubnetSpec, &SubnetSpec, &SubnetSpec) {
        (&self.subnet_spec, &self.residual_spec, &self.integrator_spec)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter range of pathway subnet `entity` at zero-based layer `layer`.
    pub fn subnet_param_range(&self, layer: usize, entity: usize) -> std::ops::Range<usize> {
        self.pathways[layer][entity].param_range()
    }

    pub fn residual_param_range(&self) -> Option<std::ops::Range<usize>> {
        self.residual.as_ref().map(Mlp::param_range)
    }

    pub fn integrator_param_range(&self) -> std::ops::Range<usize> {
        self.integrator.param_range()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_markers() {
            return Err(BinnError::DimensionMismatch(format!(
                "model expects {} markers, got {}",
                self.n_markers(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<LatentTrace> {
        self.check_input(&x)?;
        Ok(self.forward_cached(x, None).0)
    }

    /// Forward pass with one latent held constant across all samples;
    /// everything downstream of it sees the clamped value.
    pub fn forward_clamped(&self, x: ArrayView2<f64>, clamp: Clamp) -> Result<LatentTrace> {
        self.check_input(&x)?;
        if clamp.layer >= self.n_layers() {
            return Err(BinnError::UnknownEntity(format!("layer {}", clamp.layer + 1)));
        }
        if clamp.entity >= self.masks[clamp.layer].n_entities() {
            return Err(BinnError::UnknownEntity(format!(
                "entity {} in layer {}",
                clamp.entity,
                clamp.layer + 1
            )));
        }
        Ok(self.forward_cached(x, Some(clamp)).0)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.prediction)
    }

    /// Unchecked forward pass; callers validate the input width.
    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        clamp: Option<Clamp>,
    ) -> (LatentTrace, ForwardCache) {
        let n = x.nrows();
        let mut latents: Vec<Array2<f64>> = Vec::with_capacity(self.n_layers());
        let mut caches = Vec::with_capacity(self.n_layers());
        for (l, (mask, subnets)) in self.masks.iter().zip(&self.pathways).enumerate() {
            let input = if l == 0 { x } else { latents[l - 1].view() };
            let mut out = Array2::zeros((n, mask.n_entities()));
            let mut layer_caches = Vec::with_capacity(subnets.len());
            for (j, mlp) in subnets.iter().enumerate() {
                let gathered = input.select(Axis(1), mask.support(j));
                let cache = mlp.forward(&self.params, gathered);
                match clamp {
                    Some(c) if c.layer == l && c.entity == j => out.column_mut(j).fill(c.value),
                    _ => out.column_mut(j).assign(&cache.output().column(0)),
                }
                layer_caches.push(cache);
            }
            latents.push(out);
            caches.push(layer_caches);
        }
        let residual = self.residual.as_ref().map(|mlp| {
            let gathered = x.select(Axis(1), &self.residual_marker_index);
            mlp.forward(&self.params, gathered)
        });
        let residual_output = residual
            .as_ref()
            .map_or_else(|| Array2::zeros((n, 0)), |c| c.output().clone());
        let z = concatenate![Axis(1), latents.last().unwrap().view(), residual_output.view()];
        let integrator = self.integrator.forward(&self.params, z);
        let prediction = integrator.output().column(0).to_owned();
        (
            LatentTrace {
                per_layer_latents: latents,
                residual_output,
                prediction,
            },
            ForwardCache {
                layers: caches,
                residual,
                integrator,
                clamp,
            },
        )
    }

    /// Gradients of `sum_i upstream[i] * prediction[i]` w.r.t. all parameters.
    pub fn backward(&self, x: ArrayView2<f64>, upstream_gradient: &[f64]) -> Result<ParameterGradients> {
        self.check_input(&x)?;
        if upstream_gradient.len() != x.nrows() {
            return Err(BinnError::ShapeMismatch(format!(
                "upstream gradient has {} entries for {} samples",
                upstream_gradient.len(),
                x.nrows()
            )));
        }
        let (_, cache) = self.forward_cached(x, None);
        let d = Array1::from(upstream_gradient.to_vec());
        Ok(self.backward_cached(&cache, d.view(), None))
    }

    /// Backpropagates a prediction gradient plus optional direct gradients on
    /// each layer's latents (from latent-supervision losses).
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        d_prediction: ndarray::ArrayView1<f64>,
        d_latents: Option<&[Array2<f64>]>,
    ) -> ParameterGradients {
        let n = d_prediction.len();
        let mut grads = vec![0.0; self.params.len()];
        let d_out = d_prediction.to_owned().insert_axis(Axis(1));
        let d_z = self
            .integrator
            .backward(&self.params, &cache.integrator, d_out, &mut grads, true)
            .expect("input gradient requested");
        let k_last = self.masks.last().unwrap().n_entities();
        if let (Some(mlp), Some(rc)) = (&self.residual, &cache.residual) {
            let d_r = d_z.slice(s![.., k_last..]).to_owned();
            mlp.backward(&self.params, rc, d_r, &mut grads, false);
        }
        let mut d_u = d_z.slice(s![.., ..k_last]).to_owned();
        for l in (0..self.n_layers()).rev() {
            if let Some(extra) = d_latents.and_then(|d| d.get(l)) {
                if extra.dim() == d_u.dim() {
                    d_u += extra;
                }
            }
            let mask = &self.masks[l];
            let mut d_prev = (l > 0).then(|| Array2::zeros((n, mask.n_inputs())));
            for (j, mlp) in self.pathways[l].iter().enumerate() {
                if matches!(cache.clamp, Some(c) if c.layer == l && c.entity == j) {
                    continue;
                }
                let d_col = d_u.column(j).to_owned().insert_axis(Axis(1));
                let d_in = mlp.backward(&self.params, &cache.layers[l][j], d_col, &mut grads, l > 0);
                if let (Some(prev), Some(d_in)) = (d_prev.as_mut(), d_in) {
                    for (c, &row) in mask.support(j).iter().enumerate() {
                        let mut col = prev.column_mut(row);
                        col += &d_in.column(c);
                    }
                }
            }
            match d_prev {
                Some(p) => d_u = p,
                None => break,
            }
        }
        ParameterGradients { values: grads }
    }

    pub fn to_record(&self) -> BinnRecord {
        BinnRecord {
            masks: self.masks.iter().map(LayerMask::to_record).collect(),
            subnet_spec: self.subnet_spec.clone(),
            residual_spec: self.residual_spec.clone(),
            integrator_spec: self.integrator_spec.clone(),
            residual_marker_index: self.residual_marker_index.clone(),
            params: self.params.clone(),
            seed: self.seed,
        }
    }

    pub fn from_record(rec: BinnRecord) -> Result<Self> {
        let masks = rec
            .masks
            .into_iter()
            .map(LayerMask::try_from)
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::build(
            masks,
            rec.subnet_spec,
            rec.residual_spec,
            rec.integrator_spec,
            rec.seed,
        )?;
        if rec.params.len() != model.params.len() {
            return Err(BinnError::ShapeMismatch(format!(
                "stored {} parameters, architecture needs {}",
                rec.params.len(),
                model.params.len()
            )));
        }
        if rec.residual_marker_index != model.residual_marker_index {
            return Err(BinnError::SchemaError("residual marker index disagrees with masks".into()));
        }
        model.params = rec.params;
        Ok(model)
    }
}

/// Serialized form. `params` lists pathway subnets layer by layer in entity
/// order, then the residual net, then the integrator; each subnet stores its
/// layers in order as row-major `fan_in x fan_out` weights then biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnRecord {
    pub masks: Vec<MaskRecord>,
    pub subnet_spec: SubnetSpec,
    pub residual_spec: SubnetSpec,
    pub integrator_spec: SubnetSpec,
    pub residual_marker_index: Vec<usize>,
    pub params: Vec<f64>,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use ndarray::array;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn two_entity_mask() -> LayerMask {
        LayerMask::from_supports(1, ids("m", 4), ids("g", 2), vec![vec![0, 1], vec![2, 3]]).unwrap()
    }

    #[test]
    fn latent_ignores_inputs_outside_its_support() {
        let model = BinnModel::build(
            vec![two_entity_mask()],
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            SubnetSpec::integrator_default(),
            7,
        )
        .unwrap();
        assert!(!model.has_residual());
        let x = array![[0.0, 1.0, 2.0, 1.0]];
        let a = model.forward(x.view()).unwrap();
        let x2 = array![[0.0, 1.0, -5.0, 9.0]];
        let b = model.forward(x2.view()).unwrap();
        assert_eq!(a.per_layer_latents[0][[0, 0]], b.per_layer_latents[0][[0, 0]]);
        assert_ne!(a.per_layer_latents[0][[0, 1]], b.per_layer_latents[0][[0, 1]]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            BinnModel::build(
                vec![two_entity_mask()],
                SubnetSpec::pathway_default(),
                SubnetSpec::residual_default(),
                SubnetSpec::integrator_default(),
                seed,
            )
            .unwrap()
        };
        assert_eq!(build(11).params(), build(11).params());
        assert_ne!(build(11).params(), build(12).params());
    }

    #[test]
    fn identity_chain_passes_dosage_through() {
        let mask = LayerMask::from_supports(1, ids("m", 1), ids("g", 1), vec![vec![0]]).unwrap();
        let mut model = BinnModel::build(
            vec![mask],
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            0,
        )
        .unwrap();
        // subnet: w, b ; integrator: w, b
        model.params_mut().copy_from_slice(&[1.0, 0.0, 1.0, 0.0]);
        let t = model.forward(array![[2.0]].view()).unwrap();
        assert_eq!(t.per_layer_latents[0], array![[2.0]]);
        assert_eq!(t.prediction, array![2.0]);
    }

    #[test]
    fn wrong_marker_count_is_rejected() {
        let model = BinnModel::build(
            vec![two_entity_mask()],
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            0,
        )
        .unwrap();
        assert!(matches!(
            model.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(BinnError::DimensionMismatch(_))
        ));
        assert!(matches!(
            model.backward(array![[1.0, 2.0, 3.0, 4.0]].view(), &[1.0, 2.0]),
            Err(BinnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn broken_chain_is_a_dimension_mismatch() {
        let l2 = LayerMask::from_supports(2, ids("h", 3), ids("p", 1), vec![vec![0, 1, 2]]).unwrap();
        let err = BinnModel::build(
            vec![two_entity_mask(), l2],
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            SubnetSpec::linear(1),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, BinnError::DimensionMismatch(_)));
    }

    #[test]
    fn residual_gets_unannotated_markers() {
        let mask = LayerMask::from_supports(1, ids("m", 5), ids("g", 2), vec![vec![0, 1], vec![1, 3]]).unwrap();
        let spec = SubnetSpec {
            hidden_layer_widths: vec![2],
            activation: Activation::Sigmoid,
            output_width: 3,
            output_activation: Activation::Identity,
            fan_in_scaled: false,
        };
        let model = BinnModel::build(
            vec![mask],
            SubnetSpec::pathway_default(),
            spec,
            SubnetSpec::integrator_default(),
            1,
        )
        .unwrap();
        assert_eq!(model.residual_marker_index(), &[2, 4]);
        assert_eq!(model.integrator_fan_in(), 2 + 3);
        let t = model.forward(Array2::ones((4, 5)).view()).unwrap();
        assert_eq!(t.residual_output.dim(), (4, 3));
    }

    #[test]
    fn record_round_trip() {
        let model = BinnModel::build(
            vec![two_entity_mask()],
            SubnetSpec::pathway_default(),
            SubnetSpec::residual_default(),
            SubnetSpec::integrator_default(),
            5,
        )
        .unwrap();
        let json = serde_json::to_string(&model.to_record()).unwrap();
        let back = BinnModel::from_record(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
