//! Shape measures for white-matter streamline bundles, plus a multimodal
//! Siamese regressor that predicts them from sampled point clouds and
//! scalar tractography descriptors.
//!
//! Module map:
//! - [`tractio`]: bundle data model, ASCII polydata and native binary I/O
//! - [`shape`]: voxel-based ground-truth shape measures
//! - [`synth`]: seeded synthetic bundle generator and dataset manifests
//! - [`features`]: point-cloud sampling and tabular descriptors
//! - [`pca`]: standardized PCA over the ten measures
//! - [`nn`]: dual-encoder network, paired loss, Adam, training, checkpoints
//! - [`metrics`]: Pearson r, nMSE, Fisher z, paired t-test, reports
//! - [`config`] / [`pipeline`]: run configuration and end-to-end pipelines

pub mod config;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod shape;
pub mod synth;
pub mod tractio;

pub use tractio::{Bundle, Point3, Streamline};
