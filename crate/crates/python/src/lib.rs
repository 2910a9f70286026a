//! Python bindings: synthetic data, masks, single models, experiments,
//! saved ensembles and sensitivity analysis. Matrices cross the boundary
//! as lists of rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use binn::io;
use binn::mask_builder::build_from_pathway_table;
use binn::sensitivity::{ensemble_sensitivity, SensitivityOptions};
use binn::synthetic::{GeneratorConfig, SyntheticDataset};
use binn::training::ensemble::{EnsembleRecord, ModelEnsemble, ModelFamily};
use binn::training::experiment::{ExperimentConfig, ExperimentData, MaskSet};
use binn::training::{train, TrainConfig, TrainingData};
use binn::{BinnError, BinnModel, GenotypeMatrix, LayerMask, SubnetSpec};

fn py_err(e: BinnError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have unequal lengths"));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_family(f: Option<&str>) -> PyResult<Option<ModelFamily>> {
    f.map(ModelFamily::parse).transpose().map_err(py_err)
}

#[pyclass(name = "SyntheticDataset", frozen)]
struct PySyntheticDataset {
    inner: SyntheticDataset,
}

#[pymethods]
impl PySyntheticDataset {
    #[getter]
    fn genotype(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.genotype.values())
    }

    #[getter]
    fn line_ids(&self) -> Vec<String> {
        self.inner.genotype.line_ids().to_vec()
    }

    #[getter]
    fn marker_ids(&self) -> Vec<String> {
        self.inner.genotype.marker_ids().to_vec()
    }

    #[getter]
    fn metabolites(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.metabolites.values())
    }

    #[getter]
    fn metabolite_ids(&self) -> Vec<String> {
        self.inner.metabolites.gene_ids().to_vec()
    }

    #[getter]
    fn phenotype(&self) -> Vec<f64> {
        self.inner.phenotype.clone()
    }

    #[getter]
    fn pathway_table(&self) -> BTreeMap<String, Vec<String>> {
        self.inner.pathway_table().into_iter().collect()
    }

    /// Writes genotype, metabolite, phenotype and causal-table files.
    fn export(&self, dir: PathBuf) -> PyResult<()> {
        io::export_synthetic(&dir, &self.inner).map_err(py_err)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "SyntheticDataset(lines={}, markers={})",
            self.inner.genotype.n_lines(),
            self.inner.genotype.n_markers()
        )
    }
}

/// Generates the synthetic benchmark. `config_json` may override any
/// generator field.
#[pyfunction]
#[pyo3(signature = (n_lines=1000, seed=0, config_json=None))]
fn generate(n_lines: usize, seed: u64, config_json: Option<&str>) -> PyResult<PySyntheticDataset> {
    let mut cfg: GeneratorConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => GeneratorConfig::default(),
    };
    cfg.n_lines = n_lines;
    cfg.seed = seed;
    Ok(PySyntheticDataset {
        inner: binn::synthetic::generate(&cfg).map_err(py_err)?,
    })
}

#[pyclass(name = "LayerMask", frozen, from_py_object)]
#[derive(Clone)]
struct PyLayerMask {
    inner: LayerMask,
}

#[pymethods]
impl PyLayerMask {
    #[staticmethod]
    fn from_pathway_table(table: BTreeMap<String, Vec<String>>, marker_ids: Vec<String>) -> PyResult<Self> {
        let t: Vec<(String, Vec<String>)> = table.into_iter().collect();
        Ok(Self {
            inner: build_from_pathway_table(&t, &marker_ids).map_err(py_err)?,
        })
    }

    #[getter]
    fn entity_ids(&self) -> Vec<String> {
        self.inner.entity_ids().to_vec()
    }

    #[getter]
    fn n_inputs(&self) -> usize {
        self.inner.n_inputs()
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    fn __repr__(&self) -> String {
        format!("LayerMask({} inputs x {} entities)", self.inner.n_inputs(), self.inner.n_entities())
    }
}

#[pyclass(name = "BinnModel")]
struct PyBinnModel {
    inner: BinnModel,
}

#[pymethods]
impl PyBinnModel {
    /// Default architecture over the given layer masks.
    #[new]
    #[pyo3(signature = (masks, seed=0))]
    fn new(masks: Vec<PyLayerMask>, seed: u64) -> PyResult<Self> {
        let inner = BinnModel::build(
            masks.into_iter().map(|m| m.inner).collect(),
            SubnetSpec::pathway_default(),
            SubnetSpec::residual_default(),
            SubnetSpec::integrator_default(),
            seed,
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(to_array(x)?.view()).map_err(py_err)?.to_vec())
    }

    /// Latent activations per omics layer, each `n x k`.
    fn latents(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let t = self.inner.forward(to_array(x)?.view()).map_err(py_err)?;
        Ok(t.per_layer_latents.iter().map(|l| to_rows(l.view())).collect())
    }

    /// Trains with MSE and early stopping on an optional validation set.
    /// Returns the number of epochs run.
    #[pyo3(signature = (x, y, x_val=None, y_val=None, max_epochs=200, seed=0))]
    fn fit(
        &mut self,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        x_val: Option<Vec<Vec<f64>>>,
        y_val: Option<Vec<f64>>,
        max_epochs: usize,
        seed: u64,
    ) -> PyResult<usize> {
        let x = to_array(x)?;
        let y = Array1::from(y);
        let val = match (x_val, y_val) {
            (Some(a), Some(b)) => Some((to_array(a)?, Array1::from(b))),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("pass both x_val and y_val or neither")),
        };
        let cfg = TrainConfig {
            max_epochs,
            seed,
            ..TrainConfig::default()
        };
        let vd = val.as_ref().map(|(a, b)| TrainingData::new(a.view(), b.view(), None));
        let hist = train(&mut self.inner, &TrainingData::new(x.view(), y.view(), None), vd.as_ref(), &cfg)
            .map_err(py_err)?;
        Ok(hist.epochs.len())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_record()).map_err(json_err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let rec = serde_json::from_str(s).map_err(json_err)?;
        Ok(Self {
            inner: BinnModel::from_record(rec).map_err(py_err)?,
        })
    }
}

#[pyclass(name = "ModelEnsemble", frozen)]
struct PyEnsemble {
    inner: ModelEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let rec: EnsembleRecord = io::read_json(&path, "ensemble").map_err(py_err)?;
        Ok(Self {
            inner: ModelEnsemble::from_record(rec).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_json(&path, "ensemble", &self.inner.to_record()).map_err(py_err)
    }

    #[getter]
    fn n_members(&self) -> usize {
        self.inner.members.len()
    }

    #[getter]
    fn marker_ids(&self) -> Vec<String> {
        self.inner.marker_ids.clone()
    }

    /// Mean prediction on raw dosages whose columns follow `marker_ids`.
    #[pyo3(signature = (x, family=None))]
    fn predict(&self, x: Vec<Vec<f64>>, family: Option<&str>) -> PyResult<Vec<f64>> {
        let f = parse_family(family)?;
        Ok(self.inner.predict_mean(to_array(x)?.view(), f).map_err(py_err)?.to_vec())
    }

    /// `(entity, delta, model_count, rank)` for the selected BINN members,
    /// each evaluated on its own test lines.
    #[pyo3(signature = (genotype, line_ids, family=None, perturbation_scale=1.0))]
    fn sensitivity(
        &self,
        genotype: Vec<Vec<f64>>,
        line_ids: Vec<String>,
        family: Option<&str>,
        perturbation_scale: f64,
    ) -> PyResult<Vec<(String, f64, usize, usize)>> {
        let g = GenotypeMatrix::new(to_array(genotype)?, line_ids, self.inner.marker_ids.clone(), None)
            .map_err(py_err)?;
        let opts = SensitivityOptions {
            family: parse_family(family)?,
            perturbation_scale,
            ..SensitivityOptions::default()
        };
        let r = ensemble_sensitivity(&self.inner, &g, &opts).map_err(py_err)?;
        Ok(r.entities.into_iter().map(|e| (e.entity_id, e.delta, e.model_count, e.rank)).collect())
    }
}

#[pyclass(name = "ExperimentResult", frozen)]
struct PyExperimentResult {
    #[pyo3(get)]
    metrics: Vec<(String, usize, usize, usize, u64, f64, f64, f64)>,
    #[pyo3(get)]
    n_audit_violations: usize,
    ensemble: Py<PyEnsemble>,
}

#[pymethods]
impl PyExperimentResult {
    #[getter]
    fn ensemble(&self, py: Python<'_>) -> Py<PyEnsemble> {
        self.ensemble.clone_ref(py)
    }
}

/// Runs the cross-validated experiment on a synthetic dataset with a fixed
/// mask. `config_json` is an experiment configuration document.
#[pyfunction]
#[pyo3(signature = (dataset, mask, config_json=None))]
fn run_experiment(
    py: Python<'_>,
    dataset: &PySyntheticDataset,
    mask: &PyLayerMask,
    config_json: Option<&str>,
) -> PyResult<PyExperimentResult> {
    let cfg: ExperimentConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => ExperimentConfig::default(),
    };
    let d = &dataset.inner;
    let data = ExperimentData {
        genotype: &d.genotype,
        phenotype: &d.phenotype,
        intermediates: Some(&d.metabolites),
    };
    let masks = MaskSet::Fixed(vec![mask.inner.clone()]);
    let r = py
        .detach(|| binn::training::experiment::run_experiment(data, &masks, &cfg))
        .map_err(py_err)?;
    Ok(PyExperimentResult {
        metrics: r
            .metrics
            .iter()
            .map(|m| (m.family.to_string(), m.split, m.fold, m.size, m.seed, m.mse, m.pearson, m.spearman))
            .collect(),
        n_audit_violations: r.audit.violations().len(),
        ensemble: Py::new(py, PyEnsemble { inner: r.ensemble })?,
    })
}

#[pymodule]
fn binn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySyntheticDataset>()?;
    m.add_class::<PyLayerMask>()?;
    m.add_class::<PyBinnModel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyExperimentResult>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
