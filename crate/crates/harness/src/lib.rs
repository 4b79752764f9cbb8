//! Scene datasets on disk, pseudo ground-truth caches, the training loop,
//! sliding-window video inference and the evaluation report.

pub mod augment;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod model;
pub mod scene;
pub mod train;

pub use config::{Config, TrainConfig};
pub use error::{Error, Result};
