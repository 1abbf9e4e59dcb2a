use dualcam_core::streamsim::{
    generate_motion_scenario, missed_fraction_closed_form, simulate_session, simulate_timestamp_sync, svm_train,
    synthetic_training_set, MotionGeneratorConfig, MotionScenarioConfig, SessionConfig, SvmConfig, SvmModel,
    TimestampSyncConfig,
};

fn classifier() -> SvmModel {
    let data = synthetic_training_set(400, &MotionGeneratorConfig::default(), 11);
    svm_train(&data, &SvmConfig::default()).unwrap()
}

#[test]
fn missed_fraction_matches_closed_form() {
    let model = classifier();
    for delay in [7, 11] {
        let session = SessionConfig {
            delay_frames: delay,
            record_timeline: false,
            ..Default::default()
        };
        let gen = MotionScenarioConfig {
            episodes: 5_000,
            ..Default::default()
        };
        let scenario = generate_motion_scenario(&gen, &session, 21).unwrap();
        assert!(scenario.shutter_frames.len() >= 100_000, "{}", scenario.shutter_frames.len());
        let report = simulate_session(&scenario, &model, &session, 4).unwrap();
        let mean_len = (gen.motion_frames[0] + gen.motion_frames[1]) as f64 / 2.0;
        let expected = missed_fraction_closed_form(delay, mean_len);
        let observed = report.missed_fraction();
        assert!((observed - expected).abs() < 0.02, "delay {delay}: {observed} vs {expected}");
        assert!(report.activations.iter().all(|a| a.first_uw_frame - a.onset_frame == delay));
    }
}

#[test]
fn sync_converges_from_any_offset() {
    let cfg = TimestampSyncConfig::default();
    for offset in (-16_000..=16_000).step_by(1_000) {
        let errs = simulate_timestamp_sync(offset, 30, 33_333, &cfg);
        assert!(errs[29].abs() < 1_000, "{offset}: {errs:?}");
    }
}
