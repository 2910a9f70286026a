//! Builds layer masks from data: elastic-net gene selection, marker
//! nomination by marginal association, or a known pathway table.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::elastic_net::elastic_net_cv;
use crate::data::{ExpressionMatrix, GenotypeMatrix};
use crate::error::{BinnError, Result};
use crate::mask::LayerMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    #[default]
    ElasticNetPlusAssociation,
    PathwayTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskRecipe {
    pub source: MaskSource,
    pub l1_ratio: f64,
    pub top_k_snps_per_gene: usize,
    pub cv_folds: usize,
    pub n_penalties: usize,
    /// Smallest penalty on the path, as a fraction of the critical penalty.
    pub min_penalty_ratio: f64,
    /// Optional floor on squared correlation; nominated markers below it are
    /// dropped unless that would leave the gene empty.
    pub min_r2: Option<f64>,
}

impl Default for MaskRecipe {
    fn default() -> Self {
        Self {
            source: MaskSource::ElasticNetPlusAssociation,
            l1_ratio: 0.10,
            top_k_snps_per_gene: 20,
            cv_folds: 5,
            n_penalties: 30,
            min_penalty_ratio: 1e-2,
            min_r2: None,
        }
    }
}

impl MaskRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.top_k_snps_per_gene == 0 {
            return Err(BinnError::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(BinnError::InvalidConfig(format!("l1_ratio {} outside [0, 1]", self.l1_ratio)));
        }
        Ok(())
    }
}

fn standardize_columns(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let m = col.mean().unwrap_or(0.0);
        let sd = col.mapv(|v| (v - m) * (v - m)).mean().unwrap_or(0.0).sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|v| (v - m) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// Genes with a nonzero elastic-net coefficient at the cross-validated
/// penalty. Expression columns are standardized first.
pub fn select_genes(
    expression: &ExpressionMatrix,
    y: &[f64],
    recipe: &MaskRecipe,
    seed_value: u64,
) -> Result<Vec<String>> {
    recipe.validate()?;
    if y.len() != expression.values().nrows() {
        return Err(BinnError::LengthMismatch {
            expected: expression.values().nrows(),
            got: y.len(),
        });
    }
    let x = standardize_columns(expression.values());
    let cv = elastic_net_cv(
        x.view(),
        ArrayView1::from(y),
        recipe.l1_ratio,
        recipe.n_penalties,
        recipe.min_penalty_ratio,
        recipe.cv_folds,
        seed_value,
    )?;
    let genes: Vec<String> = cv
        .model
        .support()
        .into_iter()
        .map(|j| expression.gene_ids()[j].clone())
        .collect();
    if genes.is_empty() {
        return Err(BinnError::EmptySelection);
    }
    Ok(genes)
}

/// Squared Pearson correlation of every column of `x` with `target`.
pub fn marginal_r2(x: ArrayView2<f64>, target: ArrayView1<f64>) -> Vec<f64> {
    let n = target.len() as f64;
    let tm = target.mean().unwrap_or(0.0);
    let t = target.mapv(|v| v - tm);
    let tss = t.dot(&t);
    x.axis_iter(Axis(1))
        .map(|col| {
            let m = col.sum() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (a, b) in col.iter().zip(&t) {
                let d = a - m;
                sxy += d * b;
                sxx += d * d;
            }
            if sxx > 0.0 && tss > 0.0 {
                sxy * sxy / (sxx * tss)
            } else {
                0.0
            }
        })
        .collect()
}

/// The `top_k` markers most associated with one gene's expression, by
/// squared marginal correlation; ties go to the lower marker index.
pub fn nominate_snps(genotype: &GenotypeMatrix, expression: ArrayView1<f64>, top_k: usize) -> Result<Vec<String>> {
    Ok(nominate_indices(genotype.values(), expression, top_k, None)?
        .into_iter()
        .map(|j| genotype.marker_ids()[j].clone())
        .collect())
}

fn nominate_indices(
    x: ArrayView2<f64>,
    expression: ArrayView1<f64>,
    top_k: usize,
    min_r2: Option<f64>,
) -> Result<Vec<usize>> {
    if top_k == 0 || top_k > x.ncols() {
        return Err(BinnError::InvalidConfig(format!(
            "top_k must lie in 1..={}, got {top_k}",
            x.ncols()
        )));
    }
    if expression.len() != x.nrows() {
        return Err(BinnError::LengthMismatch { expected: x.nrows(), got: expression.len() });
    }
    let r2 = marginal_r2(x, expression);
    if r2.iter().all(|v| *v == 0.0) {
        log::warn!("expression profile carries no association signal; ranking falls back to marker order");
    }
    let mut order: Vec<usize> = (0..r2.len()).collect();
    order.sort_by(|&a, &b| r2[b].total_cmp(&r2[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    if let Some(floor) = min_r2 {
        let kept: Vec<usize> = order.iter().copied().filter(|&j| r2[j] >= floor).collect();
        if !kept.is_empty() {
            order = kept;
        }
    }
    Ok(order)
}

/// Assembles a layer-1 mask. Entities are sorted by id and marker lists are
/// deduplicated, so the result does not depend on input ordering.
pub fn assemble_mask(gene_markers: &[(String, Vec<String>)], marker_ids: &[String]) -> Result<LayerMask> {
    let index: BTreeMap<&str, usize> = marker_ids.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut merged: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for (gene, markers) in gene_markers {
        let entry = merged.entry(gene.as_str()).or_default();
        for m in markers {
            let &i = index
                .get(m.as_str())
                .ok_or_else(|| BinnError::UnknownEntity(format!("marker `{m}` not in genotype")))?;
            entry.insert(i);
        }
    }
    let entity_ids: Vec<String> = merged.keys().map(|g| g.to_string()).collect();
    let supports: Vec<Vec<usize>> = merged.into_values().map(|s| s.into_iter().collect()).collect();
    LayerMask::from_supports(1, marker_ids.to_vec(), entity_ids, supports)
}

/// Where a mask came from; stored next to it in the mask file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskProvenance {
    pub recipe: MaskRecipe,
    pub split_id: Option<usize>,
    pub seed: u64,
    /// Training lines the data-driven steps saw.
    pub training_lines: Vec<String>,
}

/// One layer in the mask file format: entity ids with their input ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFileLayer {
    pub layer_index: usize,
    pub input_feature_ids: Vec<String>,
    pub entity_ids: Vec<String>,
    pub entity_inputs: Vec<Vec<String>>,
}

impl MaskFileLayer {
    pub fn from_mask(mask: &LayerMask) -> Self {
        let ids = mask.input_feature_ids();
        Self {
            layer_index: mask.layer_index(),
            input_feature_ids: ids.to_vec(),
            entity_ids: mask.entity_ids().to_vec(),
            entity_inputs: mask
                .supports()
                .iter()
                .map(|s| s.iter().map(|&i| ids[i].clone()).collect())
                .collect(),
        }
    }

    pub fn to_mask(&self) -> Result<LayerMask> {
        if self.entity_inputs.len() != self.entity_ids.len() {
            return Err(BinnError::SchemaError("entity_inputs and entity_ids differ in length".into()));
        }
        let index: BTreeMap<&str, usize> = self
            .input_feature_ids
            .iter()
            .enumerate()
            .map(|(i, m)| (m.as_str(), i))
            .collect();
        let supports = self
            .entity_inputs
            .iter()
            .map(|list| {
                list.iter()
                    .map(|m| {
                        index
                            .get(m.as_str())
                            .copied()
                            .ok_or_else(|| BinnError::UnknownEntity(format!("input `{m}` not declared")))
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LayerMask::from_supports(
            self.layer_index,
            self.input_feature_ids.clone(),
            self.entity_ids.clone(),
            supports,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub layers: Vec<MaskFileLayer>,
    pub provenance: MaskProvenance,
}

impl MaskFile {
    pub fn new(masks: &[LayerMask], provenance: MaskProvenance) -> Self {
        Self {
            layers: masks.iter().map(MaskFileLayer::from_mask).collect(),
            provenance,
        }
    }

    pub fn layer_masks(&self) -> Result<Vec<LayerMask>> {
        self.layers.iter().map(MaskFileLayer::to_mask).collect()
    }
}

/// Data-driven mask from training lines only: select genes against the
/// phenotype, then nominate markers for each selected gene.
pub fn build_from_data(
    genotype: &GenotypeMatrix,
    expression: &ExpressionMatrix,
    y: &[f64],
    train_rows: &[usize],
    recipe: &MaskRecipe,
    seed_value: u64,
) -> Result<LayerMask> {
    recipe.validate()?;
    if expression.line_ids() != genotype.line_ids() {
        return Err(BinnError::IdMismatch {
            context: "expression and genotype line order".into(),
            ids: Vec::new(),
        });
    }
    let expr = expression.select_lines(train_rows);
    let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    let genes = select_genes(&expr, &y_train, recipe, seed_value)?;
    let x = genotype.values().select(Axis(0), train_rows);
    let k = recipe.top_k_snps_per_gene.min(genotype.n_markers());
    let lists: Vec<(String, Vec<String>)> = genes
        .par_iter()
        .map(|g| {
            let col = expr.column_index(g).expect("selected gene exists");
            let idx = nominate_indices(x.view(), expr.values().column(col), k, recipe.min_r2)?;
            Ok((g.clone(), idx.into_iter().map(|j| genotype.marker_ids()[j].clone()).collect()))
        })
        .collect::<Result<_>>()?;
    assemble_mask(&lists, genotype.marker_ids())
}

/// Mask straight from a gene-to-entity table such as the synthetic
/// generator's causal map.
pub fn build_from_pathway_table(table: &[(String, Vec<String>)], marker_ids: &[String]) -> Result<LayerMask> {
    assemble_mask(table, marker_ids)
}
