//! Sweeps over model families, replicate seeds, outer splits, inner folds
//! and training sizes.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{AuditLog, SplitKey, Stage};
use super::ensemble::{EnsembleMember, FittedModel, ModelEnsemble, ModelFamily, Standardizer};
use super::splits::{fold_of, fold_partition, make_splits, SplitScheme};
use super::{train, TrainConfig, TrainingData};
use crate::baselines::fcn::{solve_widths, DenseNetwork};
use crate::baselines::ridge::{default_alpha_grid, RidgeForm, RidgeSystem};
use crate::data::{ExpressionMatrix, GenotypeMatrix};
use crate::error::{BinnError, Result};
use crate::losses::{IntermediateTruth, LossConfig, TruthLayer};
use crate::mask::LayerMask;
use crate::mask_builder::{build_from_data, MaskRecipe};
use crate::model::BinnModel;
use crate::net::{Activation, SubnetSpec};
use crate::seed;
use crate::stats::{pearson, MetricSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub families: Vec<ModelFamily>,
    pub scheme: SplitScheme,
    pub outer_splits: usize,
    pub inner_folds: usize,
    pub train_fraction: f64,
    /// Train only the first few inner folds of every cell.
    pub folds_to_train: Option<usize>,
    /// Training-pool subsample sizes; `None` uses the whole pool.
    pub sizes: Option<Vec<usize>>,
    /// Replicate seeds; each one draws its own split plan.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub pathway_spec: SubnetSpec,
    pub residual_spec: SubnetSpec,
    pub integrator_spec: SubnetSpec,
    /// FCN shape; the first hidden width is re-solved to match the BINN budget.
    pub fcn_template: SubnetSpec,
    pub lambda_grid: Vec<f64>,
    pub ridge_alphas: Vec<f64>,
    /// Fraction of training lines whose intermediates the constrained
    /// families may see.
    pub label_fraction: f64,
    /// When false, wall-clock times are reported as 0 so outputs are
    /// byte-reproducible.
    pub record_timing: bool,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            families: vec![ModelFamily::BinnMse, ModelFamily::Ridge, ModelFamily::Fcn],
            scheme: SplitScheme::Pooled,
            outer_splits: 5,
            inner_folds: 5,
            train_fraction: 0.2,
            folds_to_train: None,
            sizes: None,
            seeds: vec![0],
            train: TrainConfig::default(),
            pathway_spec: SubnetSpec::pathway_default(),
            residual_spec: SubnetSpec::residual_default(),
            integrator_spec: SubnetSpec::integrator_default(),
            fcn_template: SubnetSpec {
                hidden_layer_widths: vec![1, 16],
                activation: Activation::Sigmoid,
                output_width: 1,
                output_activation: Activation::Identity,
                fan_in_scaled: false,
            },
            lambda_grid: vec![0.1],
            ridge_alphas: default_alpha_grid(),
            label_fraction: 1.0,
            record_timing: true,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return Err(BinnError::InvalidConfig(format!(
                "label fraction {} outside [0, 1]",
                self.label_fraction
            )));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(BinnError::InvalidConfig("lambda grid must be nonempty and nonnegative".into()));
        }
        if self.ridge_alphas.is_empty() || self.ridge_alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(BinnError::InvalidConfig("ridge alpha grid must be nonempty and nonnegative".into()));
        }
        if self.folds_to_train == Some(0) {
            return Err(BinnError::InvalidConfig("folds_to_train must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(BinnError::InvalidConfig("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// `k` sizes from `lo` to `hi`, evenly spaced on a log scale and rounded.
pub fn geometric_sizes(lo: usize, hi: usize, k: usize) -> Vec<usize> {
    if k <= 1 {
        return vec![lo];
    }
    let ratio = hi as f64 / lo as f64;
    (0..k)
        .map(|i| (lo as f64 * ratio.powf(i as f64 / (k - 1) as f64)).round() as usize)
        .collect()
}

/// Masks for the BINN families: fixed up front, or rebuilt from the training
/// lines of every cell.
#[derive(Clone, Debug)]
pub enum MaskSet {
    Fixed(Vec<LayerMask>),
    PerSplit(MaskRecipe),
}

/// Everything an experiment reads. Rows of all parts refer to the same lines.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentData<'a> {
    pub genotype: &'a GenotypeMatrix,
    pub phenotype: &'a [f64],
    /// Measured intermediates, matched to latent entities by column id.
    pub intermediates: Option<&'a ExpressionMatrix>,
}

impl ExperimentData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.genotype.n_lines();
        if self.phenotype.len() != n {
            return Err(BinnError::LengthMismatch { expected: n, got: self.phenotype.len() });
        }
        if self.phenotype.iter().any(|v| !v.is_finite()) {
            return Err(BinnError::SchemaError("phenotype contains non-finite values".into()));
        }
        if let Some(e) = self.intermediates {
            if e.line_ids() != self.genotype.line_ids() {
                return Err(BinnError::IdMismatch {
                    context: "intermediates must list the genotype lines in the same order".into(),
                    ids: Vec::new(),
                });
            }
        }
        Ok(())
    }
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub family: ModelFamily,
    pub split: usize,
    pub fold: usize,
    pub size: usize,
    pub seed: u64,
    pub mse: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub wall_seconds: f64,
}

/// Test-line correlation between one latent column and its measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCorrelationRow {
    pub family: ModelFamily,
    pub split: usize,
    pub fold: usize,
    pub size: usize,
    pub seed: u64,
    pub layer: usize,
    pub entity: String,
    pub pearson: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub family: ModelFamily,
    pub seed: u64,
    pub split: usize,
    pub size: usize,
    pub fold: Option<usize>,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct ExperimentResult {
    pub metrics: Vec<MetricsRow>,
    pub latent_correlations: Vec<LatentCorrelationRow>,
    pub ensemble: ModelEnsemble,
    pub failures: Vec<CellFailure>,
    pub audit: AuditLog,
}

/// Lines and masks shared by every family in one (seed, split, size) cell.
struct Cell {
    seed: u64,
    split: usize,
    size: usize,
    test: Vec<usize>,
    pool: Vec<usize>,
    folds: Vec<Vec<usize>>,
    labeled: Vec<bool>,
    masks: std::result::Result<Vec<LayerMask>, String>,
}

impl Cell {
    fn key(&self) -> SplitKey {
        (self.seed, self.split)
    }
}

struct Candidate {
    hyperparameter: Option<f64>,
    validation_mse: f64,
    model: FittedModel,
    seconds: f64,
}

struct FoldOutcome {
    standardizer: Standardizer,
    candidates: Vec<Candidate>,
}

/// Runs the full sweep. Failed cells are reported in the result and do not
/// stop other cells.
pub fn run_experiment(data: ExperimentData, masks: &MaskSet, config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    data.check()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| BinnError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(data, masks, config))
}

fn run_inner(data: ExperimentData, masks: &MaskSet, config: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut result = ExperimentResult {
        ensemble: ModelEnsemble {
            marker_ids: data.genotype.marker_ids().to_vec(),
            members: Vec::new(),
        },
        ..Default::default()
    };
    if config.families.is_empty() {
        return Ok(result);
    }
    let audit = &result.audit;
    let cells = build_cells(data, masks, config, audit)?;

    let n_folds = config.inner_folds;
    let trained = config.folds_to_train.unwrap_or(n_folds).min(n_folds);
    let jobs: Vec<(usize, ModelFamily, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, _)| {
            config
                .families
                .iter()
                .flat_map(move |&f| (0..trained).map(move |fold| (c, f, fold)))
        })
        .collect();
    let outcomes: Vec<Result<FoldOutcome>> = jobs
        .par_iter()
        .map(|&(c, family, fold)| fit_fold(data, &cells[c], family, fold, config, audit))
        .collect();

    let mut grouped: BTreeMap<(usize, ModelFamily), Vec<(usize, Result<FoldOutcome>)>> = BTreeMap::new();
    for (&(c, family, fold), outcome) in jobs.iter().zip(outcomes) {
        grouped.entry((c, family)).or_default().push((fold, outcome));
    }
    let family_rank = |f: ModelFamily| config.families.iter().position(|g| *g == f).unwrap_or(usize::MAX);
    let mut keys: Vec<(usize, ModelFamily)> = grouped.keys().copied().collect();
    keys.sort_by_key(|&(c, f)| (family_rank(f), cells[c].seed, cells[c].split, cells[c].size, c));

    for key in keys {
        let (c, family) = key;
        let cell = &cells[c];
        let folds = grouped.remove(&key).expect("key from map");
        let mut ok: Vec<(usize, FoldOutcome)> = Vec::new();
        for (fold, outcome) in folds {
            match outcome {
                Ok(o) => ok.push((fold, o)),
                Err(e) => {
                    log::warn!("{family} seed {} split {} size {} fold {fold}: {e}", cell.seed, cell.split, cell.size);
                    result.failures.push(CellFailure {
                        family,
                        seed: cell.seed,
                        split: cell.split,
                        size: cell.size,
                        fold: Some(fold),
                        error: e.to_string(),
                    });
                    result.metrics.push(MetricsRow {
                        family,
                        split: cell.split,
                        fold,
                        size: cell.size,
                        seed: cell.seed,
                        mse: f64::NAN,
                        pearson: f64::NAN,
                        spearman: f64::NAN,
                        wall_seconds: 0.0,
                    });
                }
            }
        }
        if ok.is_empty() {
            continue;
        }
        // Hyperparameters are chosen on validation folds only.
        let n_cand = ok[0].1.candidates.len();
        let best = (0..n_cand)
            .min_by(|&a, &b| {
                let ma: f64 = ok.iter().map(|(_, o)| o.candidates[a].validation_mse).sum();
                let mb: f64 = ok.iter().map(|(_, o)| o.candidates[b].validation_mse).sum();
                ma.total_cmp(&mb)
            })
            .expect("at least one candidate");
        audit.record(cell.key(), Stage::HyperparameterSelection, family.as_str(), &cell.pool);
        let test_x = data.genotype.values().select(Axis(0), &cell.test);
        let test_y: Vec<f64> = cell.test.iter().map(|&i| data.phenotype[i]).collect();
        let test_ids: Vec<String> = cell.test.iter().map(|&i| data.genotype.line_ids()[i].clone()).collect();
        for (fold, mut outcome) in ok {
            let cand = outcome.candidates.swap_remove(best);
            let member = EnsembleMember {
                family,
                seed: cell.seed,
                split: cell.split,
                fold,
                size: cell.size,
                hyperparameter: cand.hyperparameter,
                validation_mse: cand.validation_mse,
                test_lines: test_ids.clone(),
                standardizer: outcome.standardizer,
                model: cand.model,
            };
            let evaluated = member.predict(test_x.view()).and_then(|pred| {
                let metrics = MetricSet::compute(&test_y, pred.as_slice().expect("contiguous"))?;
                Ok(metrics)
            });
            let metrics = match evaluated {
                Ok(m) => m,
                Err(e) => {
                    result.failures.push(CellFailure {
                        family,
                        seed: cell.seed,
                        split: cell.split,
                        size: cell.size,
                        fold: Some(fold),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            result.metrics.push(MetricsRow {
                family,
                split: cell.split,
                fold,
                size: cell.size,
                seed: cell.seed,
                mse: metrics.mse,
                pearson: metrics.pearson_r,
                spearman: metrics.spearman_rho,
                wall_seconds: if config.record_timing { cand.seconds } else { 0.0 },
            });
            if let (Some(model), Some(truth)) = (member.model.as_binn(), data.intermediates) {
                let xs = member.standardizer.transform(test_x.view())?;
                let trace = model.forward(xs.view())?;
                for (l, mask) in model.masks().iter().enumerate() {
                    for (j, entity) in mask.entity_ids().iter().enumerate() {
                        let Some(col) = truth.column_index(entity) else { continue };
                        let z: Vec<f64> = cell.test.iter().map(|&i| truth.values()[[i, col]]).collect();
                        let t = trace.per_layer_latents[l].column(j).to_vec();
                        result.latent_correlations.push(LatentCorrelationRow {
                            family,
                            split: cell.split,
                            fold,
                            size: cell.size,
                            seed: cell.seed,
                            layer: l + 1,
                            entity: entity.clone(),
                            pearson: pearson(&t, &z).unwrap_or(f64::NAN),
                        });
                    }
                }
            }
            result.ensemble.members.push(member);
        }
    }
    result.metrics.sort_by_key(|r| (family_rank(r.family), r.seed, r.split, r.size, r.fold));
    Ok(result)
}

fn build_cells(
    data: ExperimentData,
    masks: &MaskSet,
    config: &ExperimentConfig,
    audit: &AuditLog,
) -> Result<Vec<Cell>> {
    let n = data.genotype.n_lines();
    let mut cells = Vec::new();
    for &s in &config.seeds {
        let plan = make_splits(
            n,
            data.genotype.population_labels(),
            config.scheme,
            config.outer_splits,
            config.inner_folds,
            config.train_fraction,
            s,
        )?;
        for split in &plan.outer_splits {
            audit.register_test((s, split.id), &split.test);
            let sizes = config.sizes.clone().unwrap_or_else(|| vec![split.train.len()]);
            for &size in &sizes {
                let cell = if size > split.train.len() {
                    let msg = format!("size {size} exceeds the training pool of {}", split.train.len());
                    Cell {
                        seed: s,
                        split: split.id,
                        size,
                        test: split.test.clone(),
                        pool: Vec::new(),
                        folds: Vec::new(),
                        labeled: Vec::new(),
                        masks: Err(msg),
                    }
                } else {
                    let pool = if size == split.train.len() {
                        split.train.clone()
                    } else {
                        let mut rng = seed::rng(s, "size-subsample", &[split.id as u64, size as u64]);
                        let mut picked: Vec<usize> = sample(&mut rng, split.train.len(), size)
                            .into_iter()
                            .map(|k| split.train[k])
                            .collect();
                        picked.sort_unstable();
                        picked
                    };
                    let mut rng = seed::rng(s, "cell-folds", &[split.id as u64, size as u64]);
                    let folds = match fold_partition(&pool, config.inner_folds, &mut rng) {
                        Ok(f) => f,
                        Err(e) => {
                            cells.push(Cell {
                                seed: s,
                                split: split.id,
                                size,
                                test: split.test.clone(),
                                pool,
                                folds: Vec::new(),
                                labeled: Vec::new(),
                                masks: Err(e.to_string()),
                            });
                            continue;
                        }
                    };
                    let mut labeled = vec![false; n];
                    let n_labeled = (config.label_fraction * pool.len() as f64).round() as usize;
                    let mut rng = seed::rng(s, "label-mask", &[split.id as u64, size as u64]);
                    for k in sample(&mut rng, pool.len(), n_labeled.min(pool.len())) {
                        labeled[pool[k]] = true;
                    }
                    Cell {
                        seed: s,
                        split: split.id,
                        size,
                        test: split.test.clone(),
                        pool,
                        folds,
                        labeled,
                        masks: Ok(Vec::new()),
                    }
                };
                cells.push(cell);
            }
        }
    }
    let needs_masks = config.families.iter().any(|f| f.is_binn() || *f == ModelFamily::Fcn);
    let built: Vec<std::result::Result<Vec<LayerMask>, String>> = cells
        .par_iter()
        .map(|cell| {
            cell.masks.as_ref().map_err(|e| e.clone())?;
            if !needs_masks {
                return Ok(Vec::new());
            }
            match masks {
                MaskSet::Fixed(m) => Ok(m.clone()),
                MaskSet::PerSplit(recipe) => {
                    let expr = data
                        .intermediates
                        .ok_or_else(|| "per-split masks need expression data".to_string())?;
                    audit.record(cell.key(), Stage::MaskConstruction, "mask", &cell.pool);
                    let mask_seed = seed::derive(cell.seed, "mask", &[cell.split as u64, cell.size as u64]);
                    build_from_data(data.genotype, expr, data.phenotype, &cell.pool, recipe, mask_seed)
                        .map(|m| vec![m])
                        .map_err(|e| e.to_string())
                }
            }
        })
        .collect();
    for (cell, m) in cells.iter_mut().zip(built) {
        cell.masks = m;
    }
    Ok(cells)
}

fn fit_fold(
    data: ExperimentData,
    cell: &Cell,
    family: ModelFamily,
    fold: usize,
    config: &ExperimentConfig,
    audit: &AuditLog,
) -> Result<FoldOutcome> {
    let masks = cell.masks.as_ref().map_err(|e| BinnError::InsufficientLines(e.clone()))?;
    let split = fold_of(&cell.folds, fold);
    let key = cell.key();
    let context = format!("{family} fold {fold} size {}", cell.size);
    let x_all = data.genotype.values();
    let x_tr_raw = x_all.select(Axis(0), &split.train);
    let y_tr_raw: Vec<f64> = split.train.iter().map(|&i| data.phenotype[i]).collect();
    audit.record(key, Stage::Standardization, &context, &split.train);
    let standardizer = Standardizer::fit(x_tr_raw.view(), ArrayView1::from(&y_tr_raw))?;
    let x_tr = standardizer.transform(x_tr_raw.view())?;
    drop(x_tr_raw);
    let y_tr = ndarray::Array1::from_iter(y_tr_raw.iter().map(|v| v - standardizer.target_mean));
    let x_va = standardizer.transform(x_all.select(Axis(0), &split.validation).view())?;
    let y_va = ndarray::Array1::from_iter(
        split
            .validation
            .iter()
            .map(|&i| data.phenotype[i] - standardizer.target_mean),
    );
    audit.record(key, Stage::Gradient, &context, &split.train);
    audit.record(key, Stage::EarlyStopping, &context, &split.validation);
    let idx = [cell.split as u64, cell.size as u64, fold as u64];
    let val_mse = |pred: &ndarray::Array1<f64>| (pred - &y_va).mapv(|d| d * d).mean().unwrap_or(f64::NAN);

    let mut candidates = Vec::new();
    match family {
        ModelFamily::Ridge => {
            let start = Instant::now();
            let system = RidgeSystem::new(x_tr.view(), y_tr.view(), RidgeForm::Auto)?;
            let setup = start.elapsed().as_secs_f64();
            for &alpha in &config.ridge_alphas {
                let t0 = Instant::now();
                let model = system.solve(alpha)?;
                let v = val_mse(&model.predict(x_va.view())?);
                candidates.push(Candidate {
                    hyperparameter: Some(alpha),
                    validation_mse: v,
                    model: FittedModel::Ridge(model),
                    seconds: setup + t0.elapsed().as_secs_f64(),
                });
            }
        }
        ModelFamily::Fcn => {
            let start = Instant::now();
            let budget = BinnModel::build(
                masks.clone(),
                config.pathway_spec.clone(),
                config.residual_spec.clone(),
                config.integrator_spec.clone(),
                0,
            )?
            .n_params();
            let spec = solve_widths(x_tr.ncols(), &config.fcn_template, budget)?;
            let mut net = DenseNetwork::new(x_tr.ncols(), spec, seed::derive(cell.seed, "fcn-init", &idx))?;
            let mut tc = config.train.clone();
            tc.loss = LossConfig::mse();
            tc.seed = seed::derive(cell.seed, "fcn-train", &idx);
            let hist = train(
                &mut net,
                &TrainingData::new(x_tr.view(), y_tr.view(), None),
                Some(&TrainingData::new(x_va.view(), y_va.view(), None)),
                &tc,
            )?;
            candidates.push(Candidate {
                hyperparameter: None,
                validation_mse: match hist.best_validation_mse {
                    Some(v) => v,
                    None => val_mse(&net.predict(x_va.view())?),
                },
                model: FittedModel::Fcn(net),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        _ => {
            let lambdas: Vec<Option<f64>> = if family.uses_truth() {
                config.lambda_grid.iter().map(|&l| Some(l)).collect()
            } else {
                vec![None]
            };
            let truth = if family.uses_truth() {
                let expr = data.intermediates.ok_or_else(|| {
                    BinnError::InvalidConfig(format!("{family} needs measured intermediates"))
                })?;
                Some(truth_for(masks, expr, &split.train, &cell.labeled)?)
            } else {
                None
            };
            let init_seed = seed::derive(cell.seed, "binn-init", &idx);
            for lambda in lambdas {
                let start = Instant::now();
                let mut model = BinnModel::build(
                    masks.clone(),
                    config.pathway_spec.clone(),
                    config.residual_spec.clone(),
                    config.integrator_spec.clone(),
                    init_seed,
                )?;
                let mut tc = config.train.clone();
                tc.loss = match (family, lambda) {
                    (ModelFamily::BinnSoft, Some(l)) => LossConfig::soft(l),
                    (ModelFamily::BinnHard, Some(l)) => LossConfig::hard(l),
                    _ => LossConfig::mse(),
                };
                tc.seed = seed::derive(cell.seed, "binn-train", &idx);
                let hist = train(
                    &mut model,
                    &TrainingData::new(x_tr.view(), y_tr.view(), truth.as_ref()),
                    Some(&TrainingData::new(x_va.view(), y_va.view(), None)),
                    &tc,
                )?;
                let v = match hist.best_validation_mse {
                    Some(v) => v,
                    None => val_mse(&model.predict(x_va.view())?),
                };
                candidates.push(Candidate {
                    hyperparameter: lambda,
                    validation_mse: v,
                    model: FittedModel::Binn(model),
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(FoldOutcome {
        standardizer,
        candidates,
    })
}

/// Truth for the training rows of one fold. Columns are standardized with
/// statistics of the labeled training rows; entities without a matching
/// measurement column are marked unavailable.
fn truth_for(
    masks: &[LayerMask],
    expr: &ExpressionMatrix,
    rows: &[usize],
    labeled: &[bool],
) -> Result<IntermediateTruth> {
    let lab: Vec<bool> = rows.iter().map(|&i| labeled[i]).collect();
    let mut layers = Vec::with_capacity(masks.len());
    for mask in masks {
        let k = mask.n_entities();
        let mut values = Array2::<f64>::zeros((rows.len(), k));
        let mut available = vec![false; k];
        for (j, entity) in mask.entity_ids().iter().enumerate() {
            let Some(col) = expr.column_index(entity) else { continue };
            available[j] = true;
            let raw: Vec<f64> = rows.iter().map(|&i| expr.values()[[i, col]]).collect();
            let labeled_vals: Vec<f64> = raw.iter().zip(&lab).filter(|(_, l)| **l).map(|(v, _)| *v).collect();
            let (m, sd) = if labeled_vals.is_empty() {
                (0.0, 1.0)
            } else {
                let m = crate::stats::mean(&labeled_vals);
                let sd = crate::stats::std_dev(&labeled_vals);
                (m, if sd > 0.0 { sd } else { 1.0 })
            };
            for (r, v) in raw.iter().enumerate() {
                values[[r, j]] = (v - m) / sd;
            }
        }
        let any = available.iter().any(|a| *a) && lab.iter().any(|l| *l);
        layers.push(if any {
            Some(TruthLayer::new(values, lab.clone(), available)?)
        } else {
            None
        });
    }
    Ok(IntermediateTruth { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_endpoints() {
        let s = geometric_sizes(500, 20_000, 9);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], 500);
        assert_eq!(s[8], 20_000);
        for (k, v) in s.iter().enumerate() {
            let exact = 500.0 * 40f64.powf(k as f64 / 8.0);
            assert_eq!(*v, exact.round() as usize);
        }
    }
}
