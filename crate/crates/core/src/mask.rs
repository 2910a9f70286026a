//! Binary connectivity priors between consecutive layers.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};

/// Binary `d_{l-1} x k_l` mask mapping input features to biological
/// entities. Stored column-wise as sorted supports; `to_dense` recovers the
/// matrix form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    layer_index: usize,
    input_feature_ids: Vec<String>,
    entity_ids: Vec<String>,
    supports: Vec<Vec<usize>>,
}

impl LayerMask {
    /// `supports[j]` lists the input rows feeding entity `j`. Duplicates are
    /// collapsed and rows sorted.
    pub fn from_supports(
        layer_index: usize,
        input_feature_ids: Vec<String>,
        entity_ids: Vec<String>,
        supports: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if layer_index == 0 {
            return Err(BinnError::InvalidConfig("layer index starts at 1".into()));
        }
        if supports.len() != entity_ids.len() {
            return Err(BinnError::DimensionMismatch(format!(
                "{} entity ids but {} mask columns",
                entity_ids.len(),
                supports.len()
            )));
        }
        let d = input_feature_ids.len();
        let mut clean = Vec::with_capacity(supports.len());
        for (j, mut rows) in supports.into_iter().enumerate() {
            rows.sort_unstable();
            rows.dedup();
            if rows.is_empty() {
                return Err(BinnError::EmptyEntity {
                    layer: layer_index,
                    entity: entity_ids[j].clone(),
                });
            }
            if let Some(&bad) = rows.iter().find(|&&r| r >= d) {
                return Err(BinnError::DimensionMismatch(format!(
                    "mask row {bad} out of range for {d} inputs"
                )));
            }
            clean.push(rows);
        }
        Ok(Self {
            layer_index,
            input_feature_ids,
            entity_ids,
            supports: clean,
        })
    }

    /// Builds from a dense matrix whose entries must be exactly 0 or 1.
    pub fn from_dense(
        layer_index: usize,
        input_feature_ids: Vec<String>,
        entity_ids: Vec<String>,
        entries: &Array2<u8>,
    ) -> Result<Self> {
        let (d, k) = entries.dim();
        if d != input_feature_ids.len() || k != entity_ids.len() {
            return Err(BinnError::DimensionMismatch(format!(
                "mask is {d}x{k} but ids are {}x{}",
                input_feature_ids.len(),
                entity_ids.len()
            )));
        }
        if let Some(v) = entries.iter().find(|&&v| v > 1) {
            return Err(BinnError::SchemaError(format!("mask entry {v} is not binary")));
        }
        let supports = (0..k)
            .map(|j| (0..d).filter(|&i| entries[[i, j]] == 1).collect())
            .collect();
        Self::from_supports(layer_index, input_feature_ids, entity_ids, supports)
    }

    pub fn to_dense(&self) -> Array2<u8> {
        let mut m = Array2::zeros((self.n_inputs(), self.n_entities()));
        for (j, rows) in self.supports.iter().enumerate() {
            for &i in rows {
                m[[i, j]] = 1;
            }
        }
        m
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn input_feature_ids(&self) -> &[String] {
        &self.input_feature_ids
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn n_inputs(&self) -> usize {
        self.input_feature_ids.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn support(&self, entity: usize) -> &[usize] {
        &self.supports[entity]
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entity_ids.iter().position(|e| e == id)
    }

    /// Fraction of ones in the dense form.
    pub fn density(&self) -> f64 {
        let nnz: usize = self.supports.iter().map(Vec::len).sum();
        nnz as f64 / (self.n_inputs() * self.n_entities()) as f64
    }

    /// Input rows with no connection to any entity.
    pub fn unannotated_inputs(&self) -> Vec<usize> {
        let mut used = vec![false; self.n_inputs()];
        for rows in &self.supports {
            for &i in rows {
                used[i] = true;
            }
        }
        (0..self.n_inputs()).filter(|&i| !used[i]).collect()
    }

    /// `(row, column)` pairs of the nonzero entries, column-major.
    pub fn coordinates(&self) -> Vec<[usize; 2]> {
        self.supports
            .iter()
            .enumerate()
            .flat_map(|(j, rows)| rows.iter().map(move |&i| [i, j]))
            .collect()
    }

    pub fn to_record(&self) -> MaskRecord {
        MaskRecord {
            layer_index: self.layer_index,
            input_feature_ids: self.input_feature_ids.clone(),
            entity_ids: self.entity_ids.clone(),
            coordinates: self.coordinates(),
        }
    }
}

/// Sparse coordinate-list form used inside serialized model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub layer_index: usize,
    pub input_feature_ids: Vec<String>,
    pub entity_ids: Vec<String>,
    pub coordinates: Vec<[usize; 2]>,
}

impl TryFrom<MaskRecord> for LayerMask {
    type Error = BinnError;

    fn try_from(rec: MaskRecord) -> Result<Self> {
        let mut supports = vec![Vec::new(); rec.entity_ids.len()];
        for [i, j] in rec.coordinates {
            let col = supports.get_mut(j).ok_or_else(|| {
                BinnError::DimensionMismatch(format!("mask column {j} out of range"))
            })?;
            col.push(i);
        }
        LayerMask::from_supports(rec.layer_index, rec.input_feature_ids, rec.entity_ids, supports)
    }
}
