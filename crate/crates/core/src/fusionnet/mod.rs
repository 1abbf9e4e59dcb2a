//! Residual encoder-decoder that fuses the blurry source with the aligned
//! reference, its losses, exact reverse-mode gradients, and an Adam trainer.

pub mod loss;
pub mod net;
pub mod ops;
pub mod params;
pub mod train;

pub use loss::{loss, loss_and_grad, FeatureExtractor, LossConfig, LossParts, PyramidFeatures};
pub use net::{forward, FusionInputs, Tape};
pub use ops::Tensor;
pub use params::{FusionNetParams, ModelVariant, NetConfig};
pub use train::{gradients, train, TrainConfig, TrainOutcome, TrainSample};
