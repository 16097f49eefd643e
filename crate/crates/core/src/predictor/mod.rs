//! Residual code-difference predictor, its optimizer, training loop,
//! cross-validation harness and checkpoint format.

pub mod checkpoint;
pub mod cv;
pub mod mlp;
pub mod optim;
pub mod train;

pub use checkpoint::{format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use cv::{code_metrics, cross_validate, mesh_metrics, CvPlan, CvReport, FoldResult, Summary};
pub use mlp::{backward, forward, ForwardCache, MlpGrads, MlpParams, Mode};
pub use optim::{learning_rate, Optimizer, OptimizerKind};
pub use train::{train, validation_metrics, EpochRecord, TrainConfig, TrainHistory};
