//! End-to-end orchestration: ROI preparation, color matching, alignment,
//! fusion, blending, post-processing and the fallback gate, plus the
//! dataset evaluation harness and model training on synthetic triplets.

mod config;
mod deblur;
mod evaluate;
mod metrics;
mod prepare;
mod training;

pub use config::{Ablation, AlignConfig, FlowResolution, PipelineConfig};
pub use deblur::{deblur, DeblurOutput, GateInputs, Intermediates};
pub use evaluate::{evaluate, EvalRecord, EvalSummary, METRICS_FILE};
pub use metrics::{masked_mse, masked_psnr, smoothed_mean_deviation};
pub use prepare::{fusion_window, prepare, PreparedShot, Shot};
pub use training::{train_model, training_samples};
