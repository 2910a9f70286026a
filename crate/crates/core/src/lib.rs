//! Biologically-informed neural networks for genotype-to-phenotype prediction.

pub mod baselines;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod mask;
pub mod mask_builder;
pub mod model;
pub mod net;
pub mod optim;
pub mod report;
pub mod seed;
pub mod sensitivity;
pub mod stats;
pub mod synthetic;
pub mod training;

pub use data::{ExpressionMatrix, GenotypeMatrix};
pub use error::{BinnError, Result};
pub use losses::{IntermediateTruth, LossConfig, LossMode, TruthLayer};
pub use mask::LayerMask;
pub use model::{BinnModel, Clamp, LatentTrace};
pub use net::{Activation, SubnetSpec};
