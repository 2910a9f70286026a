//! Result tables: the fixed-schema metrics CSV, long-format CSVs for
//! plotting, and median/IQR summaries with percent change against a
//! baseline family.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::{percent_change, quantile};
use crate::training::ensemble::ModelFamily;
use crate::training::experiment::{LatentCorrelationRow, MetricsRow};

pub const METRICS_HEADER: [&str; 9] = [
    "family",
    "split",
    "fold",
    "size",
    "seed",
    "mse",
    "pearson",
    "spearman",
    "wall_seconds",
];

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(crate::error::BinnError::SchemaError(format!(
            "metrics header must be `{}`",
            METRICS_HEADER.join(",")
        )));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}

pub const LATENT_HEADER: [&str; 8] = ["family", "split", "fold", "size", "seed", "layer", "entity", "pearson"];

pub fn write_latent_correlations<W: Write>(w: W, rows: &[LatentCorrelationRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(LATENT_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_latent_correlations<R: Read>(r: R) -> Result<Vec<LatentCorrelationRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Pearson,
    Spearman,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Pearson, Metric::Spearman];

    pub fn of(self, r: &MetricsRow) -> f64 {
        match self {
            Metric::Mse => r.mse,
            Metric::Pearson => r.pearson,
            Metric::Spearman => r.spearman,
        }
    }
}

/// One measurement per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub family: ModelFamily,
    pub split: usize,
    pub fold: usize,
    pub size: usize,
    pub seed: u64,
    pub metric: Metric,
    pub value: f64,
}

pub fn long_format(rows: &[MetricsRow]) -> Vec<LongRow> {
    rows.iter()
        .flat_map(|r| {
            Metric::ALL.into_iter().map(move |m| LongRow {
                family: r.family,
                split: r.split,
                fold: r.fold,
                size: r.size,
                seed: r.seed,
                metric: m,
                value: m.of(r),
            })
        })
        .collect()
}

/// Spread of one metric over the splits and folds of a (family, size, seed)
/// group. Non-finite values (failed folds) are excluded and counted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: ModelFamily,
    pub size: usize,
    pub seed: u64,
    pub metric: Metric,
    pub n: usize,
    pub n_failed: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(ModelFamily, usize, u64, Metric), Vec<f64>> = BTreeMap::new();
    for r in rows {
        for m in Metric::ALL {
            groups.entry((r.family, r.size, r.seed, m)).or_default().push(m.of(r));
        }
    }
    groups
        .into_iter()
        .map(|((family, size, seed, metric), vals)| {
            let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
            let (q1, median, q3) = (quantile(&finite, 0.25), quantile(&finite, 0.5), quantile(&finite, 0.75));
            SummaryRow {
                family,
                size,
                seed,
                metric,
                n: finite.len(),
                n_failed: vals.len() - finite.len(),
                median,
                q1,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect()
}

/// [`SummaryRow`]s of one (family, size, seed) group side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WideSummaryRow {
    pub family: ModelFamily,
    pub size: usize,
    pub seed: u64,
    pub n: usize,
    pub n_failed: usize,
    pub mse_median: f64,
    pub mse_q1: f64,
    pub mse_q3: f64,
    pub mse_iqr: f64,
    pub pearson_median: f64,
    pub pearson_q1: f64,
    pub pearson_q3: f64,
    pub pearson_iqr: f64,
    pub spearman_median: f64,
    pub spearman_q1: f64,
    pub spearman_q3: f64,
    pub spearman_iqr: f64,
}

pub fn summarize_wide(rows: &[MetricsRow]) -> Vec<WideSummaryRow> {
    let mut by: BTreeMap<(ModelFamily, usize, u64), BTreeMap<Metric, SummaryRow>> = BTreeMap::new();
    for s in summarize(rows) {
        by.entry((s.family, s.size, s.seed)).or_default().insert(s.metric, s);
    }
    by.into_iter()
        .map(|((family, size, seed), m)| {
            let (a, b, c) = (&m[&Metric::Mse], &m[&Metric::Pearson], &m[&Metric::Spearman]);
            WideSummaryRow {
                family,
                size,
                seed,
                n: a.n,
                n_failed: a.n_failed,
                mse_median: a.median,
                mse_q1: a.q1,
                mse_q3: a.q3,
                mse_iqr: a.iqr,
                pearson_median: b.median,
                pearson_q1: b.q1,
                pearson_q3: b.q3,
                pearson_iqr: b.iqr,
                spearman_median: c.median,
                spearman_q1: c.q1,
                spearman_q3: c.q3,
                spearman_iqr: c.iqr,
            }
        })
        .collect()
}

/// Median of a family relative to a baseline family's median, per
/// (size, seed, metric).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: ModelFamily,
    pub baseline: ModelFamily,
    pub size: usize,
    pub seed: u64,
    pub metric: Metric,
    pub median: f64,
    pub baseline_median: f64,
    /// Empty when the baseline median is zero or missing.
    pub percent_change: Option<f64>,
}

pub fn compare(summary: &[SummaryRow], baseline: ModelFamily) -> Vec<ComparisonRow> {
    let base: BTreeMap<(usize, u64, Metric), f64> = summary
        .iter()
        .filter(|s| s.family == baseline)
        .map(|s| ((s.size, s.seed, s.metric), s.median))
        .collect();
    summary
        .iter()
        .filter(|s| s.family != baseline)
        .filter_map(|s| {
            let b = *base.get(&(s.size, s.seed, s.metric))?;
            Some(ComparisonRow {
                family: s.family,
                baseline,
                size: s.size,
                seed: s.seed,
                metric: s.metric,
                median: s.median,
                baseline_median: b,
                percent_change: if s.median.is_finite() && b.is_finite() {
                    percent_change(s.median, b)
                } else {
                    None
                },
            })
        })
        .collect()
}

/// Median absolute latent-truth correlation per (family, size, seed,
/// layer, entity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSummaryRow {
    pub family: ModelFamily,
    pub size: usize,
    pub seed: u64,
    pub layer: usize,
    pub entity: String,
    pub n: usize,
    pub median_abs_pearson: f64,
}

pub fn summarize_latent(rows: &[LatentCorrelationRow]) -> Vec<LatentSummaryRow> {
    let mut groups: BTreeMap<(ModelFamily, usize, u64, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.family, r.size, r.seed, r.layer, r.entity.clone()))
            .or_default()
            .push(r.pearson.abs());
    }
    groups
        .into_iter()
        .map(|((family, size, seed, layer, entity), v)| {
            let finite: Vec<f64> = v.into_iter().filter(|x| x.is_finite()).collect();
            LatentSummaryRow {
                family,
                size,
                seed,
                layer,
                entity,
                n: finite.len(),
                median_abs_pearson: quantile(&finite, 0.5),
            }
        })
        .collect()
}

/// Serializes any row type with a header taken from its field names.
pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
