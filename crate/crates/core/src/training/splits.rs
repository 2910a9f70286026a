//! Outer train/test splits and inner cross-validation folds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    #[default]
    Pooled,
    WithinPopulation,
    LeaveOnePopulationOut,
}

impl SplitScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "within_population" => Ok(Self::WithinPopulation),
            "leave_one_population_out" | "lopo" => Ok(Self::LeaveOnePopulationOut),
            other => Err(BinnError::InvalidConfig(format!("unknown split scheme `{other}`"))),
        }
    }
}

/// One train/test partition with its inner folds. Indices refer to rows of
/// the dataset the plan was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OuterSplit {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// The population this split belongs to (within-population) or holds
    /// out (leave-one-population-out).
    pub population: Option<String>,
    /// Validation index sets; disjoint and covering `train`.
    pub folds: Vec<Vec<usize>>,
}

/// Training and validation rows of one inner fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Fold `f` of a fold partition: validation is part `f`, training is the rest.
pub fn fold_of(parts: &[Vec<usize>], f: usize) -> Fold {
    let mut train: Vec<usize> = parts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != f)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    train.sort_unstable();
    Fold {
        train,
        validation: parts[f].clone(),
    }
}

impl OuterSplit {
    pub fn fold(&self, f: usize) -> Fold {
        fold_of(&self.folds, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub inner_folds: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub outer_splits: Vec<OuterSplit>,
}

/// Shuffles `indices` and deals them into `k` near-equal parts (each sorted).
pub fn fold_partition<R: Rng>(indices: &[usize], k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(BinnError::InvalidConfig("fold count must be positive".into()));
    }
    if indices.len() < k {
        return Err(BinnError::InsufficientLines(format!(
            "{} lines cannot fill {k} folds",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    let mut parts = vec![Vec::with_capacity(indices.len() / k + 1); k];
    for (i, idx) in shuffled.into_iter().enumerate() {
        parts[i % k].push(idx);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

fn split_group<R: Rng>(group: &[usize], train_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut g = group.to_vec();
    g.shuffle(rng);
    let n_train = (train_fraction * g.len() as f64).round() as usize;
    let test = g.split_off(n_train.min(g.len()));
    (g, test)
}

fn populations(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    groups
}

/// Builds a deterministic plan. Pooled splits are stratified by population
/// when labels are given.
pub fn make_splits(
    n_lines: usize,
    labels: Option<&[String]>,
    scheme: SplitScheme,
    n_splits: usize,
    n_folds: usize,
    train_fraction: f64,
    seed_value: u64,
) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) && scheme != SplitScheme::LeaveOnePopulationOut {
        return Err(BinnError::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if let Some(l) = labels {
        if l.len() != n_lines {
            return Err(BinnError::LengthMismatch { expected: n_lines, got: l.len() });
        }
    }
    let mut raw: Vec<(Vec<usize>, Vec<usize>, Option<String>)> = Vec::new();
    match scheme {
        SplitScheme::Pooled => {
            let groups: Vec<Vec<usize>> = match labels {
                Some(l) => populations(l).into_values().collect(),
                None => vec![(0..n_lines).collect()],
            };
            for s in 0..n_splits {
                let mut rng = seed::rng(seed_value, "outer-split", &[s as u64]);
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for g in &groups {
                    let (tr, te) = split_group(g, train_fraction, &mut rng);
                    train.extend(tr);
                    test.extend(te);
                }
                raw.push((train, test, None));
            }
        }
        SplitScheme::WithinPopulation => {
            let l = labels.ok_or_else(|| {
                BinnError::InvalidConfig("within-population splits need population labels".into())
            })?;
            for (p, (name, group)) in populations(l).into_iter().enumerate() {
                for s in 0..n_splits {
                    let mut rng = seed::rng(seed_value, "outer-split-pop", &[p as u64, s as u64]);
                    let (train, test) = split_group(&group, train_fraction, &mut rng);
                    raw.push((train, test, Some(name.to_string())));
                }
            }
        }
        SplitScheme::LeaveOnePopulationOut => {
            let l = labels.ok_or_else(|| {
                BinnError::InvalidConfig("leave-one-population-out needs population labels".into())
            })?;
            let groups = populations(l);
            if groups.len() < 2 {
                return Err(BinnError::InvalidConfig(
                    "leave-one-population-out needs at least two populations".into(),
                ));
            }
            for (name, group) in groups {
                let train = (0..n_lines).filter(|i| l[*i] != name).collect();
                raw.push((train, group, Some(name.to_string())));
            }
        }
    }
    let mut outer_splits = Vec::with_capacity(raw.len());
    for (id, (mut train, mut test, population)) in raw.into_iter().enumerate() {
        train.sort_unstable();
        test.sort_unstable();
        if test.is_empty() {
            return Err(BinnError::InsufficientLines(format!("split {id} has an empty test set")));
        }
        let mut rng = seed::rng(seed_value, "inner-folds", &[id as u64]);
        let folds = fold_partition(&train, n_folds, &mut rng)?;
        outer_splits.push(OuterSplit {
            id,
            train,
            test,
            population,
            folds,
        });
    }
    Ok(SplitPlan {
        scheme,
        inner_folds: n_folds,
        train_fraction,
        seed: seed_value,
        outer_splits,
    })
}
