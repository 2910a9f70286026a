//! Reference predictors: ridge regression, elastic net and a dense network.

pub mod elastic_net;
pub mod fcn;
pub mod ridge;

pub use elastic_net::{elastic_net_cv, elastic_net_fit, ElasticNetCv, ElasticNetModel};
pub use fcn::{fcn_fit, DenseNetwork};
pub use ridge::{default_alpha_grid, ridge_fit, RidgeModel};
