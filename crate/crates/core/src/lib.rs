//! Patch triplet curation for guided low-dose CT denoising.
//!
//! The crate covers the full data path at desk scale:
//!
//! - [`image`]: 8-bit grayscale rasters, cropping and binary PGM I/O.
//! - [`synthesize`]: synthetic LDCT degradation (random shift, elastic warp, Gaussian noise).
//! - [`similarity`]: discretization, difference maps, weighted similarity masks and RMSE.
//! - [`purify`]: NCCT neighborhood search and LDCT/NDCT/NCCT triplet selection.
//! - [`patchset`]: patch location enumeration, triplet manifests and patch export.
//! - [`phantom`]: deterministic synthetic slices for demos and fixtures.
//! - [`attention`]: window self/cross-attention with relative position bias, analytic
//!   backward pass and a finite-difference gradient checker.
//! - [`toytrain`]: Charbonnier loss, AdamW, MultiStepLR and a tiny guided denoiser.
//! - [`metrics`]: Fréchet distance between Gaussians and polynomial-kernel MMD.
//! - [`cli`]: the `ptsp` command-line front end.

pub mod attention;
pub mod cli;
mod error;
pub mod image;
pub mod metrics;
pub mod parallel;
pub mod patchset;
pub mod phantom;
pub mod purify;
pub mod similarity;
pub mod synthesize;
pub mod toytrain;

pub use error::{Error, Result};
pub use image::{load_pgm, save_pgm, GrayImage, PatchLoc};
pub use similarity::DiscretizationScheme;
