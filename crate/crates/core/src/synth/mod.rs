//! Synthetic training and evaluation data: motion-blur kernels, the blur and
//! noise model, light-dot highlights and a simulated ultrawide reference.

pub mod blur;
pub mod highlights;
pub mod kernel;
pub mod reference;
pub mod scene;
pub mod texture;

pub use blur::{apply_blur_model, convolve, NoiseParams};
pub use highlights::{add_synthetic_highlights, render_highlights, sample_highlights, Highlight, HighlightParams};
pub use kernel::{sample_trajectory_kernel, BlurKernel, TrajectoryConfig};
pub use reference::simulate_uw_reference;
pub use scene::{
    generate_dataset, generate_triplet, list_triplets, read_triplet, read_triplet_meta, triplet_dir_name, triplet_seed,
    write_triplet, SceneConfig, Triplet, TripletMeta,
};
