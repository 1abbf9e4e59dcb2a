//! Discrete-event simulation of the adaptive dual-camera stream: motion
//! classifier, UW activation, exposure and timestamp synchronization, and
//! zero-shutter-lag frame pairing.

pub mod ae;
pub mod session;
pub mod svm;
pub mod sync;
pub mod zsl;

pub use ae::{ae_sync, total_exposure, DEFAULT_MU};
pub use session::{
    generate_motion_scenario, missed_fraction_closed_form, simulate_session, Activation, FrameRecord,
    MotionScenarioConfig, PressOutcome, Scenario, SessionConfig, SessionReport, UwState,
};
pub use svm::{
    svm_predict, svm_train, synthetic_training_set, MotionFeatures, MotionGeneratorConfig, SvmConfig, SvmModel,
};
pub use sync::{simulate_timestamp_sync, software_timestamp_sync, TimestampSyncConfig};
pub use zsl::{zsl_pair, FrameEvent, RingBuffer, ZslPairing, MAX_PAIR_DIFF_US};
