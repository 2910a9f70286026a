//! In-memory datasets: genotype dosages and intermediate omics matrices.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{BinnError, Result};

fn ensure_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    let dups: Vec<String> = ids
        .iter()
        .filter(|id| !seen.insert(id.as_str()))
        .cloned()
        .collect();
    if dups.is_empty() {
        Ok(())
    } else {
        Err(BinnError::IdMismatch {
            context: format!("duplicate {what}"),
            ids: dups,
        })
    }
}

fn ensure_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(BinnError::SchemaError(format!(
            "{what} entry ({r}, {c}) is not finite: {v}"
        )));
    }
    Ok(())
}

/// `n x p` allele-dosage matrix. The only input a trained model needs.
#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeMatrix {
    values: Array2<f64>,
    line_ids: Vec<String>,
    marker_ids: Vec<String>,
    population_labels: Option<Vec<String>>,
}

impl GenotypeMatrix {
    pub fn new(
        values: Array2<f64>,
        line_ids: Vec<String>,
        marker_ids: Vec<String>,
        population_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if line_ids.len() != n {
            return Err(BinnError::LengthMismatch {
                expected: n,
                got: line_ids.len(),
            });
        }
        if marker_ids.len() != p {
            return Err(BinnError::LengthMismatch {
                expected: p,
                got: marker_ids.len(),
            });
        }
        if let Some(labels) = &population_labels {
            if labels.len() != n {
                return Err(BinnError::LengthMismatch {
                    expected: n,
                    got: labels.len(),
                });
            }
        }
        ensure_unique(&line_ids, "line ids")?;
        ensure_unique(&marker_ids, "marker ids")?;
        ensure_finite(&values, "genotype")?;
        Ok(Self {
            values,
            line_ids,
            marker_ids,
            population_labels,
        })
    }

    /// Builds a matrix with generated ids `L0..` and `M0..`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        let lines = (0..n).map(|i| format!("L{i}")).collect();
        let markers = (0..p).map(|j| format!("M{j}")).collect();
        Self::new(values, lines, markers, None)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn line_ids(&self) -> &[String] {
        &self.line_ids
    }

    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }

    pub fn population_labels(&self) -> Option<&[String]> {
        self.population_labels.as_deref()
    }

    pub fn n_lines(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_markers(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_population_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_lines() {
            return Err(BinnError::LengthMismatch {
                expected: self.n_lines(),
                got: labels.len(),
            });
        }
        self.population_labels = Some(labels);
        Ok(self)
    }

    /// Rows in the given order.
    pub fn select_lines(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            line_ids: rows.iter().map(|&r| self.line_ids[r].clone()).collect(),
            marker_ids: self.marker_ids.clone(),
            population_labels: self
                .population_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r].clone()).collect()),
        }
    }

    /// Columns reordered to follow `ids`; extra markers are dropped.
    pub fn align_markers(&self, ids: &[String]) -> Result<Self> {
        if ids == self.marker_ids.as_slice() {
            return Ok(self.clone());
        }
        let index: std::collections::HashMap<&str, usize> =
            self.marker_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let missing: Vec<String> = ids.iter().filter(|m| !index.contains_key(m.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(BinnError::IdMismatch {
                context: "markers required by the model are absent".into(),
                ids: missing,
            });
        }
        let cols: Vec<usize> = ids.iter().map(|m| index[m.as_str()]).collect();
        Ok(Self {
            values: self.values.select(Axis(1), &cols),
            line_ids: self.line_ids.clone(),
            marker_ids: ids.to_vec(),
            population_labels: self.population_labels.clone(),
        })
    }
}

/// `n x g` matrix of intermediate measurements (expression levels or
/// metabolite concentrations), one column per biological entity.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    values: Array2<f64>,
    line_ids: Vec<String>,
    gene_ids: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(values: Array2<f64>, line_ids: Vec<String>, gene_ids: Vec<String>) -> Result<Self> {
        let (n, g) = values.dim();
        if line_ids.len() != n {
            return Err(BinnError::LengthMismatch {
                expected: n,
                got: line_ids.len(),
            });
        }
        if gene_ids.len() != g {
            return Err(BinnError::LengthMismatch {
                expected: g,
                got: gene_ids.len(),
            });
        }
        ensure_unique(&line_ids, "line ids")?;
        ensure_unique(&gene_ids, "gene ids")?;
        ensure_finite(&values, "expression")?;
        Ok(Self {
            values,
            line_ids,
            gene_ids,
        })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn line_ids(&self) -> &[String] {
        &self.line_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn column_index(&self, gene: &str) -> Option<usize> {
        self.gene_ids.iter().position(|g| g == gene)
    }

    pub fn select_lines(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            line_ids: rows.iter().map(|&r| self.line_ids[r].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
        }
    }
}
