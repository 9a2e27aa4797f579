//! Metric depth bins and the geometry around them: bin centers and the
//! Chamfer bin loss, range domains and bin fusion, FOV alignment, evaluation
//! metrics, and RGB-D data (on-disk and procedural).

pub mod bins;
pub mod data;
pub mod domains;
pub mod error;
pub mod fov;
pub mod maps;
pub mod metrics;
pub mod stats;

pub use error::{Error, Result};
