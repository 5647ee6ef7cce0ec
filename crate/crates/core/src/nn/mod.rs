//! Siamese dual-encoder regressor.
//!
//! One branch maps a centered point cloud (`N x 3`) through a shared per-point
//! stack `3 -> 64 -> 64 -> 128 -> 256` (affine + ReLU) and a max-pool over
//! points, and the tabular pair (NoS, NoP) through `2 -> 16 -> 32`. The
//! concatenated 288-vector goes through a `288 -> 128 -> out` head. Both
//! branches of a training pair run on the same [`NetworkParams`].
//!
//! Gradients are written by hand. The max-pool routes each channel's gradient
//! to the single argmax point, so the backward pass through the point stack
//! only touches those rows.

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;
mod loss;
mod optim;
mod params;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use backward::backward;
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, infer, ForwardCache};
pub use gradcheck::{gradient_check, GradcheckReport};
pub use loss::{mse, paired_loss, PairedLoss};
pub use optim::{lr_at, Adam, AdamConfig, LrSchedule};
pub use params::{head_input_dim, Dense, NetworkParams, HEAD_HIDDEN, POINT_WIDTHS, TAB_WIDTHS};
pub use predict::{Predictor, PredictError};
pub use train::{train, EpochLog, SampleSet, SiameseNet, TrainConfig, TrainError, TrainOutcome};

/// The four model variants of the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Points only, regresses the 10 standardized measures.
    Vanilla,
    /// Points + tabular, regresses the 10 standardized measures.
    Multimodal,
    /// Points only, regresses standardized PCA scores.
    Pca,
    /// Points + tabular, regresses standardized PCA scores.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vanilla, Variant::Multimodal, Variant::Pca, Variant::Full];

    pub fn uses_tabular(self) -> bool {
        matches!(self, Variant::Multimodal | Variant::Full)
    }

    pub fn uses_pca(self) -> bool {
        matches!(self, Variant::Pca | Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Multimodal => "multimodal",
            Variant::Pca => "pca",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant '{s}' (expected vanilla, multimodal, pca or full)"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: String, got: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn shape_err(what: &'static str, expected: impl fmt::Debug, got: impl fmt::Debug) -> NnError {
    NnError::ShapeMismatch { what, expected: format!("{expected:?}"), got: format!("{got:?}") }
}
