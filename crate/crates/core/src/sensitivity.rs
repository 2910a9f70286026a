//! Latent clamping sensitivity: hold one pathway latent at its mean plus or
//! minus a multiple of its spread, measure how far the mean prediction
//! moves, and aggregate over every model that carries the entity.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, GenotypeMatrix};
use crate::error::{BinnError, Result};
use crate::model::{BinnModel, Clamp};
use crate::training::ensemble::{EnsembleMember, ModelEnsemble, ModelFamily};

/// Per-entity latent moments over an evaluation set, plus the baseline mean
/// prediction. `layer` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub layer: usize,
    pub entity_ids: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub sd: Vec<f64>,
    pub baseline: f64,
}

fn check_layer(model: &BinnModel, layer: usize) -> Result<usize> {
    if layer == 0 || layer > model.n_layers() {
        return Err(BinnError::UnknownEntity(format!("layer {layer}")));
    }
    Ok(layer - 1)
}

pub fn latent_stats(model: &BinnModel, x: ArrayView2<f64>, layer: usize) -> Result<LatentStats> {
    let pos = check_layer(model, layer)?;
    if x.nrows() == 0 {
        return Err(BinnError::InsufficientLines("empty evaluation set".into()));
    }
    let trace = model.forward(x)?;
    let z = &trace.per_layer_latents[pos];
    let n = z.nrows() as f64;
    let mut mean = Vec::with_capacity(z.ncols());
    let mut sd = Vec::with_capacity(z.ncols());
    for col in z.columns() {
        let m = col.sum() / n;
        let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        sd.push(v.sqrt());
    }
    Ok(LatentStats {
        layer,
        entity_ids: model.masks()[pos].entity_ids().to_vec(),
        mean,
        sd,
        baseline: trace.prediction.mean().expect("nonempty"),
    })
}

/// Symmetric mean-prediction deviation for one entity clamped to
/// `mean ± scale * sd`.
pub fn clamp_and_measure(
    model: &BinnModel,
    x: ArrayView2<f64>,
    stats: &LatentStats,
    entity: usize,
    scale: f64,
) -> Result<f64> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(BinnError::InvalidConfig(format!("perturbation scale must be >= 0, got {scale}")));
    }
    if entity >= stats.entity_ids.len() {
        return Err(BinnError::UnknownEntity(format!("entity {entity} in layer {}", stats.layer)));
    }
    let layer = check_layer(model, stats.layer)?;
    let shift = scale * stats.sd[entity];
    let mut dev = 0.0;
    for value in [stats.mean[entity] + shift, stats.mean[entity] - shift] {
        let y = model.forward_clamped(x, Clamp { layer, entity, value })?.prediction;
        dev += (y.mean().expect("nonempty") - stats.baseline).abs();
    }
    Ok(0.5 * dev)
}

/// Deviations of every entity in one layer of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSensitivity {
    pub label: String,
    pub entity_ids: Vec<String>,
    pub deltas: Vec<f64>,
}

pub fn measure_model(
    model: &BinnModel,
    x: ArrayView2<f64>,
    layer: usize,
    scale: f64,
    label: impl Into<String>,
) -> Result<ModelSensitivity> {
    let stats = latent_stats(model, x, layer)?;
    let deltas = (0..stats.entity_ids.len())
        .into_par_iter()
        .map(|j| clamp_and_measure(model, x, &stats, j, scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelSensitivity {
        label: label.into(),
        entity_ids: stats.entity_ids,
        deltas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySensitivity {
    pub entity_id: String,
    pub delta: f64,
    pub model_count: usize,
    /// 1-based.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub layer: usize,
    pub perturbation_scale: f64,
    pub per_model: Vec<ModelSensitivity>,
    /// Sorted by descending delta, ties by entity id.
    pub entities: Vec<EntitySensitivity>,
}

/// Averages each entity over the models that contain it.
pub fn aggregate(per_model: Vec<ModelSensitivity>, layer: usize, scale: f64) -> SensitivityReport {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for m in &per_model {
        for (id, d) in m.entity_ids.iter().zip(&m.deltas) {
            let e = acc.entry(id.as_str()).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
        }
    }
    let mut entities: Vec<EntitySensitivity> = acc
        .into_iter()
        .map(|(id, (sum, count))| EntitySensitivity {
            entity_id: id.to_string(),
            delta: sum / count as f64,
            model_count: count,
            rank: 0,
        })
        .collect();
    entities.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.entity_id.cmp(&b.entity_id)));
    for (i, e) in entities.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    SensitivityReport {
        layer,
        perturbation_scale: scale,
        per_model,
        entities,
    }
}

impl SensitivityReport {
    pub fn ranking(&self) -> Vec<&str> {
        self.entities.iter().map(|e| e.entity_id.as_str()).collect()
    }

    /// `entity_id,delta,model_count,rank[,top_n]`; the last column flags the
    /// first `top_n` entities when a threshold is given.
    pub fn write_csv<W: Write>(&self, w: W, top_n: Option<usize>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["entity_id", "delta", "model_count", "rank"];
        if top_n.is_some() {
            header.push("top_n");
        }
        out.write_record(&header)?;
        for e in &self.entities {
            let mut row = vec![
                e.entity_id.clone(),
                format!("{}", e.delta),
                e.model_count.to_string(),
                e.rank.to_string(),
            ];
            if let Some(k) = top_n {
                row.push((e.rank <= k).to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Which ensemble members to analyse and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityOptions {
    pub family: Option<ModelFamily>,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    /// 1-based; `None` selects the last omics layer.
    pub layer: Option<usize>,
    pub perturbation_scale: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            family: None,
            seed: None,
            size: None,
            layer: None,
            perturbation_scale: 1.0,
        }
    }
}

impl SensitivityOptions {
    fn selects(&self, m: &EnsembleMember) -> bool {
        m.family.is_binn()
            && self.family.is_none_or(|f| m.family == f)
            && self.seed.is_none_or(|s| m.seed == s)
            && self.size.is_none_or(|s| m.size == s)
    }
}

fn member_label(m: &EnsembleMember) -> String {
    format!("{}/seed{}/split{}/fold{}/n{}", m.family, m.seed, m.split, m.fold, m.size)
}

/// Standardized test-line inputs of one member.
fn member_inputs(m: &EnsembleMember, genotype: &GenotypeMatrix, index: &HashMap<&str, usize>) -> Result<Array2<f64>> {
    let mut missing = Vec::new();
    let rows: Vec<usize> = m
        .test_lines
        .iter()
        .filter_map(|id| {
            let r = index.get(id.as_str()).copied();
            if r.is_none() {
                missing.push(id.clone());
            }
            r
        })
        .collect();
    if !missing.is_empty() {
        return Err(BinnError::IdMismatch {
            context: "test lines absent from genotype".into(),
            ids: missing,
        });
    }
    let x = genotype.select_lines(&rows);
    m.standardizer.transform(x.values())
}

fn selected<'a>(ensemble: &'a ModelEnsemble, opts: &SensitivityOptions) -> Result<Vec<&'a EnsembleMember>> {
    let chosen: Vec<&EnsembleMember> = ensemble.members.iter().filter(|m| opts.selects(m)).collect();
    if chosen.is_empty() {
        return Err(BinnError::InvalidConfig("no BINN members match the selection".into()));
    }
    Ok(chosen)
}

/// Runs the clamping analysis for every selected BINN member on its own
/// held-out test lines and aggregates the results.
pub fn ensemble_sensitivity(
    ensemble: &ModelEnsemble,
    genotype: &GenotypeMatrix,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport> {
    if genotype.marker_ids() != ensemble.marker_ids.as_slice() {
        return Err(BinnError::SchemaError("genotype markers differ from the ensemble's".into()));
    }
    let chosen = selected(ensemble, opts)?;
    let index: HashMap<&str, usize> = genotype.line_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let first = chosen[0].model.as_binn().expect("selected members are BINNs");
    let layer = opts.layer.unwrap_or(first.n_layers());
    let per_model = chosen
        .par_iter()
        .map(|m| {
            let model = m.model.as_binn().expect("selected members are BINNs");
            let x = member_inputs(m, genotype, &index)?;
            measure_model(model, x.view(), layer, opts.perturbation_scale, member_label(m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(per_model, layer, opts.perturbation_scale))
}

/// Pearson r between a member's latent column and the matching measured
/// intermediate on its test lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTruthRow {
    pub model: String,
    pub family: ModelFamily,
    pub seed: u64,
    pub size: usize,
    pub layer: usize,
    pub entity_id: String,
    /// `None` when either side is constant on the test lines.
    pub pearson: Option<f64>,
}

pub fn latent_truth_correlations(
    ensemble: &ModelEnsemble,
    genotype: &GenotypeMatrix,
    truth: &ExpressionMatrix,
    opts: &SensitivityOptions,
) -> Result<Vec<LatentTruthRow>> {
    let chosen = selected(ensemble, opts)?;
    let index: HashMap<&str, usize> = genotype.line_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let truth_index: HashMap<&str, usize> = truth.line_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = Vec::new();
    for m in chosen {
        let model = m.model.as_binn().expect("selected members are BINNs");
        let layer = opts.layer.unwrap_or(model.n_layers());
        let pos = check_layer(model, layer)?;
        let x = member_inputs(m, genotype, &index)?;
        let trace = model.forward(x.view())?;
        let z = &trace.per_layer_latents[pos];
        for (j, entity) in model.masks()[pos].entity_ids().iter().enumerate() {
            let Some(col) = truth.column_index(entity) else { continue };
            let mut t = Vec::with_capacity(m.test_lines.len());
            let mut v = Vec::with_capacity(m.test_lines.len());
            for (r, id) in m.test_lines.iter().enumerate() {
                if let Some(&ti) = truth_index.get(id.as_str()) {
                    t.push(truth.values()[[ti, col]]);
                    v.push(z[[r, j]]);
                }
            }
            out.push(LatentTruthRow {
                model: member_label(m),
                family: m.family,
                seed: m.seed,
                size: m.size,
                layer,
                entity_id: entity.clone(),
                pearson: crate::stats::pearson(&v, &t).ok(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::LayerMask;
    use crate::net::{Activation, SubnetSpec};
    use ndarray::array;

    /// Two single-input entities, identity subnets and a linear integrator
    /// `y = 1 * z_a + 0 * z_b`.
    fn linear_model() -> BinnModel {
        let mask = LayerMask::from_dense(
            1,
            vec!["m0".into(), "m1".into()],
            vec!["a".into(), "b".into()],
            &array![[1u8, 0], [0, 1]],
        )
        .unwrap();
        let linear = SubnetSpec {
            hidden_layer_widths: vec![],
            activation: Activation::Identity,
            output_width: 1,
            output_activation: Activation::Identity,
            fan_in_scaled: false,
        };
        let mut model = BinnModel::build(vec![mask], linear.clone(), linear.clone(), linear, 0).unwrap();
        let set = |model: &mut BinnModel, range: std::ops::Range<usize>, vals: &[f64]| {
            model.params_mut()[range].copy_from_slice(vals);
        };
        let (ra, rb, ri) = (model.subnet_param_range(0, 0), model.subnet_param_range(0, 1), model.integrator_param_range());
        set(&mut model, ra, &[1.0, 0.0]);
        set(&mut model, rb, &[1.0, 0.0]);
        set(&mut model, ri, &[1.0, 0.0, 0.0]);
        model
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let m = linear_model();
        let x = array![[1.0, 0.5], [3.0, 0.5], [8.0, 0.5]];
        let s = latent_stats(&m, x.view(), 1).unwrap();
        let col = [1.0, 3.0, 8.0];
        let mu = col.iter().sum::<f64>() / 3.0;
        let sd = (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0).sqrt();
        assert!((s.mean[0] - mu).abs() < 1e-10);
        assert!((s.sd[0] - sd).abs() < 1e-10);
        assert_eq!(s.sd[1], 0.0);
        assert!((s.baseline - mu).abs() < 1e-10);
    }

    #[test]
    fn single_sample_mean_is_that_sample() {
        let m = linear_model();
        let s = latent_stats(&m, array![[2.5, -1.0]].view(), 1).unwrap();
        assert_eq!(s.mean, vec![2.5, -1.0]);
        assert_eq!(s.sd, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_integrator_deviation_equals_sd() {
        let m = linear_model();
        // Latent a has mean 0 and population SD 2.
        let x = array![[-2.0, 0.0], [2.0, 1.0]];
        let s = latent_stats(&m, x.view(), 1).unwrap();
        assert!((s.sd[0] - 2.0).abs() < 1e-12);
        let d = clamp_and_measure(&m, x.view(), &s, 0, 1.0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert!(clamp_and_measure(&m, x.view(), &s, 0, 0.0).unwrap().abs() < 1e-12);
        // Zero integrator weight: dead path.
        assert_eq!(clamp_and_measure(&m, x.view(), &s, 1, 3.0).unwrap(), 0.0);
        assert!(matches!(
            clamp_and_measure(&m, x.view(), &s, 2, 1.0),
            Err(BinnError::UnknownEntity(_))
        ));
    }

    #[test]
    fn aggregation_divides_by_coverage() {
        let mk = |ids: &[&str], d: &[f64]| ModelSensitivity {
            label: String::new(),
            entity_ids: ids.iter().map(|s| s.to_string()).collect(),
            deltas: d.to_vec(),
        };
        let mut models = vec![mk(&["x", "y"], &[1.0, 5.0]), mk(&["x"], &[3.0])];
        for _ in 0..23 {
            models.push(mk(&["z"], &[0.5]));
        }
        let r = aggregate(models, 1, 1.0);
        let get = |id: &str| r.entities.iter().find(|e| e.entity_id == id).unwrap();
        assert_eq!(get("x").delta, 2.0);
        assert_eq!(get("x").model_count, 2);
        assert_eq!(get("y").delta, 5.0);
        assert_eq!(get("z").model_count, 23);
        assert_eq!(r.ranking(), vec!["y", "x", "z"]);
    }

    #[test]
    fn ties_break_by_id_regardless_of_order() {
        let mk = |ids: &[&str]| ModelSensitivity {
            label: String::new(),
            entity_ids: ids.iter().map(|s| s.to_string()).collect(),
            deltas: vec![1.0; ids.len()],
        };
        let a = aggregate(vec![mk(&["q", "b", "k"])], 1, 1.0);
        let b = aggregate(vec![mk(&["k", "q", "b"])], 1, 1.0);
        assert_eq!(a.ranking(), vec!["b", "k", "q"]);
        assert_eq!(a.entities, b.entities);
    }

    #[test]
    fn csv_has_stable_header() {
        let r = aggregate(
            vec![ModelSensitivity {
                label: "m".into(),
                entity_ids: vec!["S".into(), "A".into()],
                deltas: vec![0.25, 0.5],
            }],
            1,
            1.0,
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf, Some(1)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "entity_id,delta,model_count,rank,top_n");
        assert_eq!(lines[1], "A,0.5,1,1,true");
        assert_eq!(lines[2], "S,0.25,1,2,false");
    }
}
