//! Synthetic shoot-branching benchmark: gene dosages feed four metabolites
//! through saturating maps, and the metabolites set a switch-like
//! time-to-outgrowth phenotype.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ExpressionMatrix, GenotypeMatrix};
use crate::error::{BinnError, Result};
use crate::net::sigmoid;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metabolite {
    A,
    S,
    CK,
    SL,
}

impl Metabolite {
    pub const ALL: [Metabolite; 4] = [Metabolite::A, Metabolite::S, Metabolite::CK, Metabolite::SL];

    pub fn id(self) -> &'static str {
        match self {
            Metabolite::A => "A",
            Metabolite::S => "S",
            Metabolite::CK => "CK",
            Metabolite::SL => "SL",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| BinnError::InvalidConfig(format!("unknown metabolite `{s}`")))
    }

    /// +1 when a higher level delays outgrowth, -1 when it promotes it.
    pub fn direction(self) -> f64 {
        match self {
            Metabolite::A | Metabolite::SL => 1.0,
            Metabolite::S | Metabolite::CK => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_lines: usize,
    pub n_genes: usize,
    /// Causal genes per metabolite in A, S, CK, SL order; the rest are inert.
    pub genes_per_metabolite: [usize; 4],
    pub intermediate_noise_fraction: f64,
    pub phenotype_noise_fraction: f64,
    pub dominant_metabolite: Metabolite,
    pub dominant_weight_ratio: f64,
    /// Explicit phenotype weights in A, S, CK, SL order; overrides the
    /// dominant-metabolite rule when set.
    pub metabolite_weights: Option<[f64; 4]>,
    /// Gain of the gene-to-metabolite sigmoid.
    pub pathway_gain: f64,
    /// Steepness of the metabolite-to-phenotype switch.
    pub switch_steepness: f64,
    pub allele_frequency_range: (f64, f64),
    pub seed: u64,
    /// Seed for the noise streams only; defaults to `seed`.
    pub noise_seed: Option<u64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_lines: 1000,
            n_genes: 1600,
            genes_per_metabolite: [400; 4],
            intermediate_noise_fraction: 0.05,
            phenotype_noise_fraction: 0.10,
            dominant_metabolite: Metabolite::S,
            dominant_weight_ratio: 3.0,
            metabolite_weights: None,
            pathway_gain: 1.0,
            switch_steepness: 8.0,
            allele_frequency_range: (0.05, 0.5),
            seed: 0,
            noise_seed: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lines == 0 {
            return Err(BinnError::InvalidConfig("n_lines must be at least 1".into()));
        }
        let causal: usize = self.genes_per_metabolite.iter().sum();
        if causal > self.n_genes {
            return Err(BinnError::InvalidPartition(format!(
                "{causal} causal genes requested but only {} genes exist",
                self.n_genes
            )));
        }
        if self.genes_per_metabolite.contains(&0) {
            return Err(BinnError::InvalidPartition("every metabolite needs a causal gene".into()));
        }
        if !(self.intermediate_noise_fraction >= 0.0 && self.phenotype_noise_fraction >= 0.0) {
            return Err(BinnError::InvalidConfig("noise fractions must be nonnegative".into()));
        }
        let (lo, hi) = self.allele_frequency_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(BinnError::InvalidConfig(format!("bad allele frequency range ({lo}, {hi})")));
        }
        if !(self.pathway_gain.is_finite() && self.switch_steepness.is_finite()) {
            return Err(BinnError::InvalidConfig("gains must be finite".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> [f64; 4] {
        self.metabolite_weights.unwrap_or_else(|| {
            let mut w = [1.0; 4];
            w[self.dominant_metabolite.index()] = self.dominant_weight_ratio;
            w
        })
    }
}

/// The metabolite-to-phenotype map, including the standardization fitted on
/// the noise-free sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeMap {
    pub weights: [f64; 4],
    pub steepness: f64,
    pub center: f64,
    pub scale: f64,
}

impl PhenotypeMap {
    fn drive(&self, m: &[f64]) -> f64 {
        let norm = self.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        Metabolite::ALL
            .iter()
            .map(|k| k.direction() * self.weights[k.index()] * 4.0 * (m[k.index()] - 0.5))
            .sum::<f64>()
            / norm
    }

    fn raw(&self, m: &[f64]) -> f64 {
        sigmoid(self.steepness * self.drive(m))
    }

    /// Standardized noise-free phenotype for one metabolite state.
    pub fn eval(&self, m: &[f64]) -> f64 {
        (self.raw(m) - self.center) / self.scale
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub genotype: GenotypeMatrix,
    /// Measured (noisy) metabolites, columns A, S, CK, SL.
    pub metabolites: ExpressionMatrix,
    pub metabolites_clean: Array2<f64>,
    pub phenotype: Vec<f64>,
    /// Gene id to metabolite for every causal gene.
    pub causal_table: BTreeMap<String, Metabolite>,
    pub phenotype_map: PhenotypeMap,
    pub config: GeneratorConfig,
}

impl SyntheticDataset {
    /// Causal gene ids per metabolite, in A, S, CK, SL order.
    pub fn pathway_table(&self) -> Vec<(String, Vec<String>)> {
        Metabolite::ALL
            .iter()
            .map(|&m| {
                let genes = self
                    .causal_table
                    .iter()
                    .filter(|(_, v)| **v == m)
                    .map(|(g, _)| g.clone())
                    .collect();
                (m.id().to_string(), genes)
            })
            .collect()
    }
}

fn padded(prefix: char, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = config.n_lines;
    let p = config.n_genes;
    let (f_lo, f_hi) = config.allele_frequency_range;
    let mut freq_rng = seed::rng(config.seed, "allele-frequency", &[]);
    let freqs: Vec<f64> = (0..p).map(|_| freq_rng.random_range(f_lo..=f_hi)).collect();

    // One stream per line so blocks of lines can be drawn independently.
    let mut x = Array2::<f64>::zeros((n, p));
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = seed::rng(config.seed, "genotype-line", &[i as u64]);
        for (v, &f) in row.iter_mut().zip(&freqs) {
            let a = (rng.random::<f64>() < f) as u8;
            let b = (rng.random::<f64>() < f) as u8;
            *v = (a + b) as f64;
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut seed::rng(config.seed, "causal-table", &[]));
    let mut assignment: Vec<Option<Metabolite>> = vec![None; p];
    let mut cursor = 0;
    for m in Metabolite::ALL {
        for &g in &order[cursor..cursor + config.genes_per_metabolite[m.index()]] {
            assignment[g] = Some(m);
        }
        cursor += config.genes_per_metabolite[m.index()];
    }
    let mut w_rng = seed::rng(config.seed, "gene-weights", &[]);
    let gene_w: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut w_rng)).collect();

    // Each pathway index is standardized with the analytic dosage moments.
    let mut clean = Array2::<f64>::zeros((n, 4));
    for m in Metabolite::ALL {
        let genes: Vec<usize> = (0..p).filter(|&g| assignment[g] == Some(m)).collect();
        let var: f64 = genes
            .iter()
            .map(|&g| gene_w[g] * gene_w[g] * 2.0 * freqs[g] * (1.0 - freqs[g]))
            .sum();
        let sd = var.sqrt();
        for i in 0..n {
            let idx: f64 = genes.iter().map(|&g| gene_w[g] * (x[[i, g]] - 2.0 * freqs[g])).sum();
            let z = if sd > 0.0 { idx / sd } else { 0.0 };
            clean[[i, m.index()]] = sigmoid(config.pathway_gain * z);
        }
    }

    let noise_seed = config.noise_seed.unwrap_or(config.seed);
    let mut measured = clean.clone();
    let mut m_rng = seed::rng(noise_seed, "metabolite-noise", &[]);
    for k in 0..4 {
        let col: Vec<f64> = clean.column(k).to_vec();
        let sd = crate::stats::std_dev(&col) * config.intermediate_noise_fraction;
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("finite positive sd");
            for v in measured.column_mut(k) {
                *v += normal.sample(&mut m_rng);
            }
        }
    }

    let mut map = PhenotypeMap {
        weights: config.weights(),
        steepness: config.switch_steepness,
        center: 0.0,
        scale: 1.0,
    };
    let raw: Vec<f64> = clean.rows().into_iter().map(|r| map.raw(r.as_slice().unwrap())).collect();
    map.center = crate::stats::mean(&raw);
    let sd = crate::stats::std_dev(&raw);
    map.scale = if sd > 1e-12 { sd } else { 1.0 };
    let mut phenotype: Vec<f64> = raw.iter().map(|v| (v - map.center) / map.scale).collect();
    let y_sd = crate::stats::std_dev(&phenotype) * config.phenotype_noise_fraction;
    if y_sd > 0.0 {
        let normal = Normal::new(0.0, y_sd).expect("finite positive sd");
        let mut y_rng = seed::rng(noise_seed, "phenotype-noise", &[]);
        for v in &mut phenotype {
            *v += normal.sample(&mut y_rng);
        }
    }

    let line_ids: Vec<String> = (0..n).map(|i| padded('L', i, n)).collect();
    let gene_ids: Vec<String> = (0..p).map(|j| padded('G', j, p)).collect();
    let causal_table = assignment
        .iter()
        .enumerate()
        .filter_map(|(g, m)| m.map(|m| (gene_ids[g].clone(), m)))
        .collect();
    let genotype = GenotypeMatrix::new(x, line_ids.clone(), gene_ids, None)?;
    let metabolites = ExpressionMatrix::new(
        measured,
        line_ids,
        Metabolite::ALL.iter().map(|m| m.id().to_string()).collect(),
    )?;
    Ok(SyntheticDataset {
        genotype,
        metabolites,
        metabolites_clean: clean,
        phenotype,
        causal_table,
        phenotype_map: map,
        config: config.clone(),
    })
}

/// Ground-truth importance of each metabolite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOracle {
    /// Mean |d phenotype / d metabolite| in A, S, CK, SL order.
    pub values: [f64; 4],
    /// Metabolite ids by decreasing sensitivity.
    pub ranking: Vec<String>,
}

/// Central-difference derivative of the phenotype map, averaged in absolute
/// value over the noise-free metabolite states of a generated sample.
pub fn true_sensitivity(config: &GeneratorConfig) -> Result<SensitivityOracle> {
    let data = generate(config)?;
    Ok(sensitivity_of(&data.phenotype_map, &data.metabolites_clean))
}

pub fn sensitivity_of(map: &PhenotypeMap, states: &Array2<f64>) -> SensitivityOracle {
    const H: f64 = 1e-5;
    let mut values = [0.0; 4];
    for row in states.rows() {
        let m = row.to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            let mut up = m.clone();
            let mut down = m.clone();
            up[k] += H;
            down[k] -= H;
            *v += ((map.eval(&up) - map.eval(&down)) / (2.0 * H)).abs();
        }
    }
    for v in &mut values {
        *v /= states.nrows().max(1) as f64;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    SensitivityOracle {
        values,
        ranking: order.into_iter().map(|k| Metabolite::ALL[k].id().to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_lines: n,
            n_genes: 80,
            genes_per_metabolite: [20; 4],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn table_one_shapes() {
        let d = generate(&GeneratorConfig {
            n_lines: 100,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.genotype.values().dim(), (100, 1600));
        assert_eq!(d.metabolites.values().dim(), (100, 4));
        assert_eq!(d.phenotype.len(), 100);
        assert_eq!(d.causal_table.len(), 1600);
        assert!(d.genotype.values().iter().all(|v| [0.0, 1.0, 2.0].contains(v)));
    }

    #[test]
    fn bit_identical_per_seed() {
        let a = generate(&small(50)).unwrap();
        let b = generate(&small(50)).unwrap();
        assert_eq!(a.genotype, b.genotype);
        assert_eq!(a.metabolites, b.metabolites);
        assert_eq!(a.phenotype, b.phenotype);
    }

    #[test]
    fn noiseless_ignores_noise_seed() {
        let mut cfg = small(40);
        cfg.intermediate_noise_fraction = 0.0;
        cfg.phenotype_noise_fraction = 0.0;
        let a = generate(&cfg).unwrap();
        cfg.noise_seed = Some(999);
        let b = generate(&cfg).unwrap();
        assert_eq!(a.metabolites, b.metabolites);
        assert_eq!(a.phenotype, b.phenotype);
    }

    #[test]
    fn partition_is_disjoint_and_checked() {
        let d = generate(&small(5)).unwrap();
        let table = d.pathway_table();
        assert!(table.iter().all(|(_, g)| g.len() == 20));
        let mut cfg = small(5);
        cfg.genes_per_metabolite = [30; 4];
        assert!(matches!(generate(&cfg), Err(BinnError::InvalidPartition(_))));
    }

    #[test]
    fn dominant_only_is_monotone_in_dominant() {
        let mut cfg = small(300);
        cfg.metabolite_weights = Some([0.0, 1.0, 0.0, 0.0]);
        cfg.phenotype_noise_fraction = 0.0;
        let d = generate(&cfg).unwrap();
        let s: Vec<f64> = d.metabolites_clean.column(1).to_vec();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        // Sucrose promotes outgrowth, so time falls as S rises.
        for w in idx.windows(2) {
            assert!(d.phenotype[w[1]] <= d.phenotype[w[0]] + 1e-12);
        }
    }

    #[test]
    fn oracle_ranks_dominant_first() {
        let o = true_sensitivity(&small(200)).unwrap();
        assert_eq!(o.ranking[0], "S");
        let mut cfg = small(200);
        cfg.dominant_metabolite = Metabolite::CK;
        assert_eq!(true_sensitivity(&cfg).unwrap().ranking[0], "CK");
    }

    #[test]
    fn oracle_symmetric_and_null_cases() {
        let mut cfg = small(400);
        cfg.metabolite_weights = Some([1.0; 4]);
        let o = true_sensitivity(&cfg).unwrap();
        let max = o.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = o.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.10, "{:?}", o.values);
        cfg.metabolite_weights = Some([0.0; 4]);
        let o = true_sensitivity(&cfg).unwrap();
        assert!(o.values.iter().all(|v| *v == 0.0));
    }
}
