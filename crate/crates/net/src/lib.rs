//! Network side of the depth-bin estimator: the toy-scale model, its
//! losses, the data pipeline feeding it, training and evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod ops;
pub mod params;
pub mod pipeline;
pub mod train;

pub use config::{BinMode, ChamferReduction, Fusion, HeadVariant, ModelConfig, RunConfig};
pub use error::{NetError, Result};
pub use model::{ForwardOutput, Model, PredictionBundle};
