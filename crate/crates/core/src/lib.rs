//! Prediction of post-operative facial geometry for orthognathic surgery.
//!
//! A pre-operative face is encoded as a latent code of a linear morphable
//! head model, a small residual network predicts the code difference, and
//! the decoded result is compared against the post-operative ground truth
//! with Hausdorff and Chamfer distances. Training combines two clinical
//! losses (mouth convexity against the s-line, chin asymmetry about the
//! mid-sagittal plane) with latent-code and geometry supervision, and the
//! training set is enlarged by stitching synthetic upper faces onto real
//! lower-face surgical changes.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: meshes, OBJ/landmark I/O, spatial queries, clinical
//!   plane/line constructions and the evaluation metrics.
//! - [`model`]: the procedural morphable model (decode, fit, annotations).
//! - [`losses`]: the four loss terms with analytic gradients.
//! - [`predictor`]: the residual MLP, its optimizer and cross-validation.
//! - [`augment`]: upper-face stitching augmentation.
//! - [`dataset`]: synthetic cohorts, on-disk layout and k-fold splits.
//! - [`preview`]: barycentric transfer onto scans and interpolation export.
//! - [`pipeline`]: configuration, evaluation and ablation harnesses.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod preview;
pub mod seed;

pub use error::{Error, ErrorKind, Result};
pub use geometry::Vec3;
