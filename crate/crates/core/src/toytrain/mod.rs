//! Desk-scale training of a guided window cross-attention denoiser.
//!
//! LDCT and NCCT patches go in, the NDCT patch is the target. Intensities are
//! normalized to `[0, 1]` (`pixel / 255`) when samples are built from 8-bit patches.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{charbonnier, charbonnier_grad, total_loss, FeatureHook, IdentityHook};
pub use model::{ToyDenoiser, ToyDims, ToyGrads, ToyObjective, GRADCHECK_EPS, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{adamw_step, multistep_lr, AdamHyper, AdamState};
pub use train::{curve_csv, manifest_samples, synthetic_triplets, train_toy, CurvePoint, TrainConfig, TrainOutcome, TrainSample};
