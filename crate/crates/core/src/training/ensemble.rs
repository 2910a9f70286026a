//! Trained models of an experiment together with the preprocessing each
//! one needs at prediction time.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::baselines::fcn::{DenseNetwork, DenseRecord};
use crate::baselines::ridge::RidgeModel;
use crate::error::{BinnError, Result};
use crate::model::{BinnModel, BinnRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    BinnMse,
    BinnSoft,
    BinnHard,
    Ridge,
    Fcn,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::BinnMse,
        ModelFamily::BinnSoft,
        ModelFamily::BinnHard,
        ModelFamily::Ridge,
        ModelFamily::Fcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::BinnMse => "binn_mse",
            ModelFamily::BinnSoft => "binn_soft",
            ModelFamily::BinnHard => "binn_hard",
            ModelFamily::Ridge => "ridge",
            ModelFamily::Fcn => "fcn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| BinnError::InvalidConfig(format!("unknown model family `{s}`")))
    }

    pub fn is_binn(self) -> bool {
        matches!(self, ModelFamily::BinnMse | ModelFamily::BinnSoft | ModelFamily::BinnHard)
    }

    pub fn uses_truth(self) -> bool {
        matches!(self, ModelFamily::BinnSoft | ModelFamily::BinnHard)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Marker centering/scaling and phenotype centering fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub marker_mean: Vec<f64>,
    /// Population standard deviation; constant markers get scale 1.
    pub marker_scale: Vec<f64>,
    pub target_mean: f64,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(BinnError::InsufficientLines("cannot standardize zero lines".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let var = x.var_axis(Axis(0), 0.0);
        Ok(Self {
            marker_mean: mean.to_vec(),
            marker_scale: var.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect(),
            target_mean: y.mean().unwrap_or(0.0),
        })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.marker_mean.len() {
            return Err(BinnError::DimensionMismatch(format!(
                "standardizer fitted on {} markers, got {}",
                self.marker_mean.len(),
                x.ncols()
            )));
        }
        let mean = ArrayView1::from(&self.marker_mean);
        let scale = ArrayView1::from(&self.marker_scale);
        Ok((&x - &mean) / &scale)
    }
}

#[derive(Clone, Debug)]
pub enum FittedModel {
    Binn(BinnModel),
    Ridge(RidgeModel),
    Fcn(DenseNetwork),
}

impl FittedModel {
    /// Prediction on standardized inputs, before adding back the target mean.
    pub fn predict_standardized(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            FittedModel::Binn(m) => m.predict(x),
            FittedModel::Ridge(m) => m.predict(x),
            FittedModel::Fcn(m) => m.predict(x),
        }
    }

    pub fn as_binn(&self) -> Option<&BinnModel> {
        match self {
            FittedModel::Binn(m) => Some(m),
            _ => None,
        }
    }
}

/// Serialized model, tagged by kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelRecord {
    Binn(BinnRecord),
    Ridge(RidgeModel),
    Fcn(DenseRecord),
}

impl FittedModel {
    pub fn to_record(&self) -> ModelRecord {
        match self {
            FittedModel::Binn(m) => ModelRecord::Binn(m.to_record()),
            FittedModel::Ridge(m) => ModelRecord::Ridge(m.clone()),
            FittedModel::Fcn(m) => ModelRecord::Fcn(m.to_record()),
        }
    }

    pub fn from_record(rec: ModelRecord) -> Result<Self> {
        Ok(match rec {
            ModelRecord::Binn(r) => FittedModel::Binn(BinnModel::from_record(r)?),
            ModelRecord::Ridge(r) => FittedModel::Ridge(r),
            ModelRecord::Fcn(r) => FittedModel::Fcn(DenseNetwork::from_record(r)?),
        })
    }
}

/// One trained model with its provenance.
#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub family: ModelFamily,
    pub seed: u64,
    pub split: usize,
    pub fold: usize,
    pub size: usize,
    /// Selected lambda (BINN constrained families) or alpha (ridge).
    pub hyperparameter: Option<f64>,
    pub validation_mse: f64,
    pub test_lines: Vec<String>,
    pub standardizer: Standardizer,
    pub model: FittedModel,
}

impl EnsembleMember {
    /// Prediction on raw (unstandardized) dosages.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let xs = self.standardizer.transform(x)?;
        Ok(self.model.predict_standardized(xs.view())? + self.standardizer.target_mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMemberRecord {
    pub family: ModelFamily,
    pub seed: u64,
    pub split: usize,
    pub fold: usize,
    pub size: usize,
    pub hyperparameter: Option<f64>,
    pub validation_mse: f64,
    pub test_lines: Vec<String>,
    pub standardizer: Standardizer,
    pub model: ModelRecord,
}

#[derive(Clone, Debug, Default)]
pub struct ModelEnsemble {
    pub marker_ids: Vec<String>,
    pub members: Vec<EnsembleMember>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub marker_ids: Vec<String>,
    pub members: Vec<EnsembleMemberRecord>,
}

impl ModelEnsemble {
    pub fn family(&self, family: ModelFamily) -> impl Iterator<Item = &EnsembleMember> {
        self.members.iter().filter(move |m| m.family == family)
    }

    pub fn to_record(&self) -> EnsembleRecord {
        EnsembleRecord {
            marker_ids: self.marker_ids.clone(),
            members: self
                .members
                .iter()
                .map(|m| EnsembleMemberRecord {
                    family: m.family,
                    seed: m.seed,
                    split: m.split,
                    fold: m.fold,
                    size: m.size,
                    hyperparameter: m.hyperparameter,
                    validation_mse: m.validation_mse,
                    test_lines: m.test_lines.clone(),
                    standardizer: m.standardizer.clone(),
                    model: m.model.to_record(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: EnsembleRecord) -> Result<Self> {
        let members = rec
            .members
            .into_iter()
            .map(|m| {
                Ok(EnsembleMember {
                    family: m.family,
                    seed: m.seed,
                    split: m.split,
                    fold: m.fold,
                    size: m.size,
                    hyperparameter: m.hyperparameter,
                    validation_mse: m.validation_mse,
                    test_lines: m.test_lines,
                    standardizer: m.standardizer,
                    model: FittedModel::from_record(m.model)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            marker_ids: rec.marker_ids,
            members,
        })
    }

    /// Mean prediction of the selected members on raw dosages whose columns
    /// follow `marker_ids`.
    pub fn predict_mean(&self, x: ArrayView2<f64>, family: Option<ModelFamily>) -> Result<Array1<f64>> {
        let chosen: Vec<&EnsembleMember> = self
            .members
            .iter()
            .filter(|m| family.is_none_or(|f| m.family == f))
            .collect();
        if chosen.is_empty() {
            return Err(BinnError::InvalidConfig("no ensemble members match".into()));
        }
        let mut acc = Array1::zeros(x.nrows());
        for m in &chosen {
            acc += &m.predict(x)?;
        }
        Ok(acc / chosen.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardizer_uses_fit_statistics() {
        let x = array![[0.0, 5.0], [2.0, 5.0]];
        let s = Standardizer::fit(x.view(), array![1.0, 3.0].view()).unwrap();
        assert_eq!(s.marker_mean, vec![1.0, 5.0]);
        assert_eq!(s.marker_scale, vec![1.0, 1.0]);
        assert_eq!(s.target_mean, 2.0);
        let t = s.transform(array![[4.0, 7.0]].view()).unwrap();
        assert_eq!(t, array![[3.0, 2.0]]);
    }

    #[test]
    fn family_names_round_trip() {
        for f in ModelFamily::ALL {
            assert_eq!(ModelFamily::parse(f.as_str()).unwrap(), f);
        }
        assert!(ModelFamily::parse("gblup").is_err());
    }
}
