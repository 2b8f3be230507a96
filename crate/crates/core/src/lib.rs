pub mod colormap;
pub mod datapipe;
pub mod error;
pub mod flow;
pub mod grad;
pub mod image;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rawproc;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
