//! Dual-camera reference-based face deblurring.
//!
//! A blurry long-exposure frame from the main (W) camera is fused with a
//! sharp, noisy, short-exposure frame from the ultrawide (UW) camera. The
//! crate covers synthetic data generation, color matching, flow alignment
//! with occlusion masking, a residual UNet fusion model with its training
//! loop, blending, sharpening, the fallback gate, and a simulator for the
//! adaptive dual-camera streaming subsystem.

pub mod align;
pub mod blend;
pub mod colormatch;
pub mod error;
pub mod fusionnet;
pub mod gate;
pub mod imagecore;
pub mod pipeline;
pub mod postproc;
pub mod real;
pub mod streamsim;
pub mod synth;

pub use error::{Error, Result};
