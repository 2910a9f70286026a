//! File formats: CSV matrices keyed by line id, versioned JSON containers
//! for models, ensembles and masks, and atomic writes.
//!
//! Matrix CSVs have a `line_id` first column followed by one column per
//! feature. Phenotype CSVs have `line_id,phenotype`; population CSVs have
//! `line_id,population`. Floats are written in shortest round-trip form.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, GenotypeMatrix};
use crate::error::{BinnError, Result};
use crate::synthetic::SyntheticDataset;

pub const FORMAT_VERSION: u32 = 1;

/// Writes through a temporary file in the target directory, then renames,
/// so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| BinnError::Io(e.error))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Container<T> {
    format: String,
    version: u32,
    payload: T,
}

#[derive(Serialize)]
struct ContainerRef<'a, T> {
    format: &'a str,
    version: u32,
    payload: &'a T,
}

/// Saves `payload` wrapped with a format tag and version.
pub fn write_json<T: Serialize>(path: &Path, format: &str, payload: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(
            &mut *w,
            &ContainerRef {
                format,
                version: FORMAT_VERSION,
                payload,
            },
        )?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let c: Container<T> = serde_json::from_reader(BufReader::new(open(path)?))?;
    if c.format != format {
        return Err(BinnError::SchemaError(format!(
            "{} holds `{}`, expected `{format}`",
            path.display(),
            c.format
        )));
    }
    if c.version != FORMAT_VERSION {
        return Err(BinnError::SchemaError(format!(
            "{} has format version {}, this build reads {FORMAT_VERSION}",
            path.display(),
            c.version
        )));
    }
    Ok(c.payload)
}

/// Plain (unwrapped) JSON, used for configs.
pub fn write_plain_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_plain_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        BinnError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "na")
}

/// Raw table: line ids, column ids and cells with missing entries as NaN.
struct Table {
    line_ids: Vec<String>,
    columns: Vec<String>,
    values: Array2<f64>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(open(path)?));
    let header = rdr.headers()?.clone();
    if header.is_empty() || header.get(0).map(str::trim) != Some("line_id") {
        return Err(BinnError::SchemaError(format!(
            "{}: first column must be `line_id`",
            path.display()
        )));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut line_ids = Vec::new();
    let mut flat = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != columns.len() + 1 {
            return Err(BinnError::SchemaError(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                r + 1,
                rec.len(),
                columns.len() + 1
            )));
        }
        line_ids.push(rec[0].trim().to_string());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v = if is_missing(cell) {
                f64::NAN
            } else {
                cell.trim().parse::<f64>().map_err(|_| {
                    BinnError::SchemaError(format!(
                        "{}: row {}, column `{}`: `{cell}` is not a number",
                        path.display(),
                        r + 1,
                        columns[c]
                    ))
                })?
            };
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((line_ids.len(), columns.len()), flat)
        .map_err(|e| BinnError::ShapeMismatch(e.to_string()))?;
    Ok(Table {
        line_ids,
        columns,
        values,
    })
}

fn write_table<W: Write>(w: W, line_ids: &[String], columns: &[String], values: ndarray::ArrayView2<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(columns.len() + 1);
    header.push("line_id");
    header.extend(columns.iter().map(String::as_str));
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(columns.len() + 1);
    for (i, id) in line_ids.iter().enumerate() {
        row.clear();
        row.push(id.clone());
        row.extend(values.row(i).iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a genotype CSV, imputing missing dosages with the marker mean.
/// Returns the matrix and the number of imputed entries.
pub fn read_genotype(path: &Path) -> Result<(GenotypeMatrix, usize)> {
    let mut t = read_table(path)?;
    let mut imputed = 0;
    for (c, mut col) in t.values.columns_mut().into_iter().enumerate() {
        let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let missing = col.len() - present.len();
        if missing == 0 {
            continue;
        }
        if present.is_empty() {
            return Err(BinnError::SchemaError(format!(
                "{}: marker `{}` has no observed dosages",
                path.display(),
                t.columns[c]
            )));
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        col.mapv_inplace(|v| if v.is_nan() { mean } else { v });
        imputed += missing;
    }
    if imputed > 0 {
        log::info!("{}: mean-imputed {imputed} missing dosages", path.display());
    }
    Ok((GenotypeMatrix::new(t.values, t.line_ids, t.columns, None)?, imputed))
}

pub fn read_expression(path: &Path) -> Result<ExpressionMatrix> {
    let t = read_table(path)?;
    if let Some(((r, c), _)) = t.values.indexed_iter().find(|(_, v)| v.is_nan()) {
        return Err(BinnError::SchemaError(format!(
            "{}: line `{}`, column `{}` is missing",
            path.display(),
            t.line_ids[r],
            t.columns[c]
        )));
    }
    ExpressionMatrix::new(t.values, t.line_ids, t.columns)
}

fn read_keyed(path: &Path, column: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    let header = rdr.headers()?.clone();
    let expected = ["line_id", column];
    if header.len() != 2 || header.iter().map(str::trim).ne(expected) {
        return Err(BinnError::SchemaError(format!(
            "{}: header must be `line_id,{column}`",
            path.display()
        )));
    }
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[0].trim().to_string(), r[1].trim().to_string()))
        })
        .collect()
}

pub fn read_phenotype(path: &Path) -> Result<Vec<(String, f64)>> {
    read_keyed(path, "phenotype")?
        .into_iter()
        .map(|(id, v)| {
            let x: f64 = v.parse().map_err(|_| {
                BinnError::SchemaError(format!("{}: phenotype `{v}` for `{id}` is not a number", path.display()))
            })?;
            if !x.is_finite() {
                return Err(BinnError::SchemaError(format!("{}: phenotype for `{id}` is not finite", path.display())));
            }
            Ok((id, x))
        })
        .collect()
}

pub fn read_populations(path: &Path) -> Result<Vec<(String, String)>> {
    read_keyed(path, "population")
}

pub fn write_genotype<W: Write>(w: W, g: &GenotypeMatrix) -> Result<()> {
    write_table(w, g.line_ids(), g.marker_ids(), g.values())
}

pub fn write_expression<W: Write>(w: W, e: &ExpressionMatrix) -> Result<()> {
    write_table(w, e.line_ids(), e.gene_ids(), e.values())
}

pub fn write_phenotype<W: Write>(w: W, line_ids: &[String], y: &[f64]) -> Result<()> {
    write_keyed(w, line_ids, "phenotype", y)
}

/// Two-column `line_id,<column>` CSV.
pub fn write_keyed<W: Write>(w: W, line_ids: &[String], column: &str, y: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["line_id", column])?;
    for (id, v) in line_ids.iter().zip(y) {
        out.write_record([id.as_str(), &v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reorders `keyed` values to follow `order`; every id must appear exactly
/// once on both sides.
pub fn align_keyed<T: Clone>(order: &[String], keyed: Vec<(String, T)>, context: &str) -> Result<Vec<T>> {
    let mut map: HashMap<String, T> = HashMap::with_capacity(keyed.len());
    let mut dups = Vec::new();
    for (id, v) in keyed {
        if map.insert(id.clone(), v).is_some() {
            dups.push(id);
        }
    }
    if !dups.is_empty() {
        return Err(BinnError::IdMismatch {
            context: format!("duplicate lines in {context}"),
            ids: dups,
        });
    }
    let missing: Vec<String> = order.iter().filter(|id| !map.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(BinnError::IdMismatch {
            context: format!("genotype lines missing from {context}"),
            ids: missing,
        });
    }
    if map.len() != order.len() {
        let known: std::collections::HashSet<&str> = order.iter().map(String::as_str).collect();
        let mut extra: Vec<String> = map.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
        extra.sort();
        return Err(BinnError::IdMismatch {
            context: format!("{context} lines absent from genotype"),
            ids: extra,
        });
    }
    Ok(order.iter().map(|id| map[id].clone()).collect())
}

/// Reorders expression rows to follow `order`.
pub fn align_expression(order: &[String], e: &ExpressionMatrix, context: &str) -> Result<ExpressionMatrix> {
    let keyed: Vec<(String, usize)> = e.line_ids().iter().cloned().zip(0..).collect();
    let rows = align_keyed(order, keyed, context)?;
    Ok(e.select_lines(&rows))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub genotype: PathBuf,
    #[serde(default)]
    pub phenotype: Option<PathBuf>,
    #[serde(default)]
    pub intermediates: Option<PathBuf>,
    #[serde(default)]
    pub populations: Option<PathBuf>,
}

/// Validated dataset with every file aligned to the genotype line order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub genotype: GenotypeMatrix,
    pub phenotype: Option<Vec<f64>>,
    pub intermediates: Option<ExpressionMatrix>,
    pub imputed_entries: usize,
}

pub fn ingest(paths: &DatasetPaths) -> Result<Dataset> {
    let (mut genotype, imputed_entries) = read_genotype(&paths.genotype)?;
    let order = genotype.line_ids().to_vec();
    if let Some(p) = &paths.populations {
        let labels = align_keyed(&order, read_populations(p)?, "population file")?;
        genotype = genotype.with_population_labels(labels)?;
    }
    let phenotype = match &paths.phenotype {
        Some(p) => Some(align_keyed(&order, read_phenotype(p)?, "phenotype file")?),
        None => None,
    };
    let intermediates = match &paths.intermediates {
        Some(p) => Some(align_expression(&order, &read_expression(p)?, "intermediate file")?),
        None => None,
    };
    Ok(Dataset {
        genotype,
        phenotype,
        intermediates,
        imputed_entries,
    })
}

/// File names used by [`export_synthetic`].
pub const GENOTYPE_FILE: &str = "genotype.csv";
pub const METABOLITE_FILE: &str = "metabolites.csv";
pub const PHENOTYPE_FILE: &str = "phenotype.csv";
pub const CAUSAL_TABLE_FILE: &str = "causal_table.json";

/// Writes a synthetic dataset in the same formats [`ingest`] reads. The
/// causal-table JSON maps each metabolite to its causal gene ids.
pub fn export_synthetic(dir: &Path, d: &SyntheticDataset) -> Result<DatasetPaths> {
    let paths = DatasetPaths {
        genotype: dir.join(GENOTYPE_FILE),
        phenotype: Some(dir.join(PHENOTYPE_FILE)),
        intermediates: Some(dir.join(METABOLITE_FILE)),
        populations: None,
    };
    write_atomic(&paths.genotype, |w| write_genotype(w, &d.genotype))?;
    write_atomic(paths.intermediates.as_ref().unwrap(), |w| write_expression(w, &d.metabolites))?;
    write_atomic(paths.phenotype.as_ref().unwrap(), |w| {
        write_phenotype(w, d.genotype.line_ids(), &d.phenotype)
    })?;
    let table: BTreeMap<String, Vec<String>> = d.pathway_table().into_iter().collect();
    write_json(&dir.join(CAUSAL_TABLE_FILE), "causal_table", &table)?;
    Ok(paths)
}

/// Reads a causal-table JSON as `(entity, marker ids)` pairs.
pub fn read_pathway_table(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let table: BTreeMap<String, Vec<String>> = read_json(path, "causal_table")?;
    Ok(table.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, GeneratorConfig};
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn synthetic_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&GeneratorConfig {
            n_lines: 30,
            n_genes: 40,
            genes_per_metabolite: [10; 4],
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let paths = export_synthetic(dir.path(), &d).unwrap();
        let back = ingest(&paths).unwrap();
        assert_eq!(back.genotype, d.genotype);
        assert_eq!(back.intermediates.unwrap(), d.metabolites);
        let y = back.phenotype.unwrap();
        assert!(y.iter().zip(&d.phenotype).all(|(a, b)| a.to_bits() == b.to_bits()));
        let table = read_pathway_table(&dir.path().join(CAUSAL_TABLE_FILE)).unwrap();
        assert_eq!(table, d.pathway_table().into_iter().collect::<BTreeMap<_, _>>().into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn permuted_phenotype_rows_are_aligned() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.csv", "line_id,m1,m2\nL1,0,1\nL2,2,1\nL3,1,0\n");
        let y = write(dir.path(), "y.csv", "line_id,phenotype\nL3,30\nL1,10\nL2,20\n");
        let d = ingest(&DatasetPaths {
            genotype: g,
            phenotype: Some(y),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.phenotype.unwrap(), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn missing_phenotype_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.csv", "line_id,m1\nL1,0\nL2,2\n");
        let y = write(dir.path(), "y.csv", "line_id,phenotype\nL1,1\n");
        match ingest(&DatasetPaths {
            genotype: g,
            phenotype: Some(y),
            ..Default::default()
        }) {
            Err(BinnError::IdMismatch { ids, .. }) => assert_eq!(ids, vec!["L2".to_string()]),
            other => panic!("expected IdMismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_dosages_are_mean_imputed() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.csv", "line_id,m1,m2\nL1,0,NA\nL2,2,1\nL3,,1\n");
        let (m, n) = read_genotype(&g).unwrap();
        assert_eq!(n, 2);
        assert_eq!(m.values()[[2, 0]], 1.0);
        assert_eq!(m.values()[[0, 1]], 1.0);
    }

    #[test]
    fn bad_headers_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.csv", "id,m1\nL1,0\n");
        assert!(matches!(read_genotype(&g), Err(BinnError::SchemaError(_))));
        let y = write(dir.path(), "y.csv", "line_id,trait\nL1,0\n");
        assert!(matches!(read_phenotype(&y), Err(BinnError::SchemaError(_))));
        let g2 = write(dir.path(), "g2.csv", "line_id,m1\nL1,x\n");
        assert!(matches!(read_genotype(&g2), Err(BinnError::SchemaError(_))));
    }

    #[test]
    fn container_checks_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        write_json(&p, "mask", &vec![1, 2, 3]).unwrap();
        assert_eq!(read_json::<Vec<i32>>(&p, "mask").unwrap(), vec![1, 2, 3]);
        assert!(matches!(read_json::<Vec<i32>>(&p, "ensemble"), Err(BinnError::SchemaError(_))));
    }
}
