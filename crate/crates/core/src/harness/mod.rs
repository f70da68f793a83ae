//! Training, evaluation and the single-expert versus two-expert comparison.

pub mod evaluate;
pub mod experiment;
pub mod overlay;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::ModelSpec;

pub use evaluate::{evaluate, evaluate_checkpoint, metric_label, predict_masks, score_masks};
pub use experiment::{run_experiment, ComparisonTable, ExperimentOutcome, ExperimentPlan, RunResult, TableRow};
pub use overlay::{render_overlay, save_overlay};
pub use train::{train, EpochRecord, TrainOutcome};

/// Which model is trained: a single-decoder network on one expert's masks,
/// or the shared-encoder network on both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unet1,
    Unet2,
    Unaah,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Unet1, Variant::Unet2, Variant::Unaah];

    /// The network trained for this variant. Single-expert variants reuse
    /// `base` with one decoder.
    pub fn model_spec(self, base: &ModelSpec) -> ModelSpec {
        match self {
            Variant::Unaah => base.clone(),
            Variant::Unet1 | Variant::Unet2 => ModelSpec {
                num_decoders: 1,
                ..base.clone()
            },
        }
    }

    /// Identifier used in file names and metric labels.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Unet1 => "unet1",
            Variant::Unet2 => "unet2",
            Variant::Unaah => "unaah",
        }
    }

    /// Subscript in `D_model^annotation` labels.
    pub fn subscript(self) -> &'static str {
        match self {
            Variant::Unet1 => "1",
            Variant::Unet2 => "2",
            Variant::Unaah => "unaah",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Unet1 => "UNet 1",
            Variant::Unet2 => "UNet 2",
            Variant::Unaah => "UNaah",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "unet1" => Ok(Variant::Unet1),
            "unet2" => Ok(Variant::Unet2),
            "unaah" => Ok(Variant::Unaah),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected unet1, unet2 or unaah)"))),
        }
    }
}
