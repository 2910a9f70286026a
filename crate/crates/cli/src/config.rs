//! JSON run configurations. Relative paths resolve against the directory
//! of the config file that names them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use binn::io::DatasetPaths;
use binn::mask_builder::MaskRecipe;
use binn::sensitivity::SensitivityOptions;
use binn::training::experiment::ExperimentConfig;

/// Where the training masks come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MaskInput {
    /// A saved mask file, used unchanged for every split.
    File { path: PathBuf },
    /// An entity-to-marker JSON table.
    PathwayTable { path: PathBuf },
    /// Rebuilt from each split's training lines.
    Recipe { recipe: MaskRecipe },
}

impl Default for MaskInput {
    fn default() -> Self {
        MaskInput::Recipe {
            recipe: MaskRecipe::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfigFile {
    pub data: DatasetPaths,
    pub mask: MaskInput,
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildMaskConfigFile {
    pub data: DatasetPaths,
    pub pathway_table: Option<PathBuf>,
    pub recipe: MaskRecipe,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfigFile {
    pub options: SensitivityOptions,
    pub top_n: Option<usize>,
}

pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() && !p.as_os_str().is_empty() => b.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn resolve_data(base: Option<&Path>, d: &mut DatasetPaths) {
    d.genotype = resolve(base, &d.genotype);
    for p in [&mut d.phenotype, &mut d.intermediates, &mut d.populations].into_iter().flatten() {
        *p = resolve(base, p);
    }
}
