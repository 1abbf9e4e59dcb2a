//! Frame-clocked simulation of a capture session with adaptive UW streaming.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ae::{ae_sync, DEFAULT_MU};
use super::svm::{negative_features, positive_features, svm_predict, MotionFeatures, MotionGeneratorConfig, SvmModel};
use super::sync::{phase_error, software_timestamp_sync, TimestampSyncConfig};
use super::zsl::{zsl_pair, FrameEvent, RingBuffer, ZslPairing, MAX_PAIR_DIFF_US};
use crate::error::{Error, Result};
use crate::imagecore::{Camera, CaptureMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub fps: f64,
    /// Frames between the first positive decision and the first UW frame.
    pub delay_frames: usize,
    /// Consecutive negative decisions after which a streaming UW camera stops.
    pub cooldown_frames: usize,
    pub ring_capacity: usize,
    pub max_pair_diff_us: i64,
    /// W/UW exposure-time ratio used for UW auto exposure.
    pub exposure_ratio: u32,
    pub sensitivity_ratio: f64,
    pub sync: TimestampSyncConfig,
    /// Keep the per-frame timeline in the report.
    pub record_timeline: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            delay_frames: 7,
            cooldown_frames: 15,
            ring_capacity: 10,
            max_pair_diff_us: MAX_PAIR_DIFF_US,
            exposure_ratio: 4,
            sensitivity_ratio: DEFAULT_MU,
            sync: TimestampSyncConfig::default(),
            record_timeline: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid("fps must be positive"));
        }
        if self.cooldown_frames == 0 || self.ring_capacity == 0 {
            return Err(Error::invalid("cooldown and ring capacity must be positive"));
        }
        if self.max_pair_diff_us < 0 {
            return Err(Error::invalid("max pair difference must be non-negative"));
        }
        if self.exposure_ratio != 2 && self.exposure_ratio != 4 {
            return Err(Error::invalid("exposure ratio must be 2 or 4"));
        }
        self.sync.validate()
    }

    pub fn frame_interval_us(&self) -> i64 {
        (1e6 / self.fps).round() as i64
    }
}

/// Per-frame motion features and the frames on which the shutter is pressed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scenario {
    pub frames: Vec<MotionFeatures>,
    #[serde(default)]
    pub shutter_frames: Vec<usize>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            f.validate().map_err(|e| Error::invalid(format!("frame {i}: {e}")))?;
        }
        if let Some(&bad) = self.shutter_frames.iter().find(|&&s| s >= self.frames.len()) {
            return Err(Error::invalid(format!(
                "shutter press at frame {bad} is outside the {}-frame scenario",
                self.frames.len()
            )));
        }
        if self.shutter_frames.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("shutter frames must be strictly increasing"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum UwState {
    Off,
    Starting { ready_at: usize },
    /// Streaming; `negatives` counts consecutive negative decisions.
    On { negatives: usize },
}

impl UwState {
    fn label(&self) -> &'static str {
        match self {
            UwState::Off => "off",
            UwState::Starting { .. } => "starting",
            UwState::On { .. } => "on",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub timestamp_us: i64,
    pub decision: bool,
    pub state: UwState,
    pub uw_timestamp_us: Option<i64>,
    pub phase_error_us: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressOutcome {
    pub frame: usize,
    pub state: UwState,
    /// The UW camera was requested but not yet streaming.
    pub missed: bool,
    /// `None` when the UW ring has never held a frame.
    pub pairing: Option<ZslPairing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activation {
    pub onset_frame: usize,
    pub first_uw_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub frames: usize,
    pub uw_frames: usize,
    pub duty_cycle: f64,
    pub presses: usize,
    pub missed_presses: usize,
    pub fused_presses: usize,
    pub activations: Vec<Activation>,
    pub press_outcomes: Vec<PressOutcome>,
    pub timeline: Vec<FrameRecord>,
}

impl SessionReport {
    pub fn missed_fraction(&self) -> f64 {
        if self.presses == 0 {
            0.0
        } else {
            self.missed_presses as f64 / self.presses as f64
        }
    }

    /// Per-frame time series as CSV.
    pub fn write_timeline_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "timestamp_us", "decision", "uw_state", "uw_timestamp_us", "phase_error_us"])?;
        for r in &self.timeline {
            w.write_record([
                r.frame.to_string(),
                r.timestamp_us.to_string(),
                (r.decision as u8).to_string(),
                r.state.label().to_string(),
                r.uw_timestamp_us.map(|t| t.to_string()).unwrap_or_default(),
                r.phase_error_us.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Runs the session frame by frame. On frame `t` the classifier sees frame
/// `t`'s features; a positive decision while off schedules the first UW frame
/// at `t + delay_frames`, and a streaming UW camera stops on the frame of its
/// `cooldown_frames`-th consecutive negative decision. Each (re)start draws a seeded UW
/// phase offset that the timestamp controller then removes.
pub fn simulate_session(scenario: &Scenario, model: &SvmModel, cfg: &SessionConfig, seed: u64) -> Result<SessionReport> {
    cfg.validate()?;
    scenario.validate()?;
    let interval = cfg.frame_interval_us();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_ring = RingBuffer::new(cfg.ring_capacity)?;
    let mut uw_ring = RingBuffer::new(cfg.ring_capacity)?;
    let mut w_ts: Vec<i64> = Vec::new();
    let mut uw_ts: Vec<i64> = Vec::new();
    let mut state = UwState::Off;
    let mut next_uw_us: Option<i64> = None;
    let mut uw_index = 0u64;
    let mut onset = 0usize;
    let mut presses = scenario.shutter_frames.iter().peekable();
    let mut report = SessionReport {
        frames: scenario.frames.len(),
        uw_frames: 0,
        duty_cycle: 0.0,
        presses: 0,
        missed_presses: 0,
        fused_presses: 0,
        activations: Vec::new(),
        press_outcomes: Vec::new(),
        timeline: Vec::new(),
    };

    for (t, features) in scenario.frames.iter().enumerate() {
        let t_us = t as i64 * interval;
        let meta_w = CaptureMetadata {
            exposure_time_s: features.exposure_time_s,
            sensor_gain: features.sensor_gain,
            ccm: CaptureMetadata::IDENTITY_CCM,
            timestamp_us: t_us,
            camera: Camera::W,
        };
        w_ring.push(FrameEvent {
            camera: Camera::W,
            timestamp_us: t_us,
            frame_index: t as u64,
            exposure_time_s: features.exposure_time_s,
            gain: features.sensor_gain,
        })?;
        keep_recent(&mut w_ts, t_us);

        let decision = svm_predict(model, features);
        state = match state {
            UwState::Off if decision => {
                onset = t;
                UwState::Starting {
                    ready_at: t + cfg.delay_frames,
                }
            }
            UwState::On { .. } if decision => UwState::On { negatives: 0 },
            UwState::On { negatives } if negatives + 1 >= cfg.cooldown_frames => {
                next_uw_us = None;
                UwState::Off
            }
            UwState::On { negatives } => UwState::On { negatives: negatives + 1 },
            other => other,
        };

        if state == (UwState::Starting { ready_at: t }) {
            state = UwState::On { negatives: 0 };
            report.activations.push(Activation {
                onset_frame: onset,
                first_uw_frame: t,
            });
            let half = interval / 2;
            next_uw_us = Some(t_us + rng.random_range(-half + 1..half));
        }

        let mut uw_record = None;
        if let UwState::On { .. } = state {
            let uw_us = next_uw_us.expect("streaming UW camera has a schedule");
            let meta_uw = ae_sync(&meta_w, cfg.exposure_ratio, cfg.sensitivity_ratio)?;
            uw_ring.push(FrameEvent {
                camera: Camera::UW,
                timestamp_us: uw_us,
                frame_index: uw_index,
                exposure_time_s: meta_uw.exposure_time_s,
                gain: meta_uw.sensor_gain,
            })?;
            uw_index += 1;
            report.uw_frames += 1;
            keep_recent(&mut uw_ts, uw_us);
            let adjust = software_timestamp_sync(&w_ts, &uw_ts, interval, &cfg.sync);
            next_uw_us = Some(uw_us + interval + adjust);
            uw_record = Some((uw_us, phase_error(t_us, uw_us, interval)));
        }

        while let Some(&&s) = presses.peek() {
            if s != t {
                break;
            }
            presses.next();
            let missed = matches!(state, UwState::Starting { .. });
            let pairing = if uw_ring.is_empty() {
                None
            } else {
                Some(zsl_pair(&w_ring, &uw_ring, t_us, cfg.max_pair_diff_us)?)
            };
            report.presses += 1;
            report.missed_presses += missed as usize;
            report.fused_presses += pairing.as_ref().is_some_and(|p| p.is_paired()) as usize;
            report.press_outcomes.push(PressOutcome {
                frame: t,
                state,
                missed,
                pairing,
            });
        }

        if cfg.record_timeline {
            report.timeline.push(FrameRecord {
                frame: t,
                timestamp_us: t_us,
                decision,
                state,
                uw_timestamp_us: uw_record.map(|r| r.0),
                phase_error_us: uw_record.map(|r| r.1),
            });
        }
    }
    if report.frames > 0 {
        report.duty_cycle = report.uw_frames as f64 / report.frames as f64;
    }
    Ok(report)
}

fn keep_recent(ts: &mut Vec<i64>, t: i64) {
    const KEEP: usize = 8;
    if ts.len() == KEEP {
        ts.remove(0);
    }
    ts.push(t);
}

/// Generator of alternating still and motion episodes with shutter presses
/// only during motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionScenarioConfig {
    pub episodes: usize,
    /// Inclusive range of motion-episode lengths, frames.
    pub motion_frames: [usize; 2],
    /// Inclusive range of still-episode lengths, frames.
    pub still_frames: [usize; 2],
    /// Per-frame press probability while in motion.
    pub press_probability: f64,
    pub features: MotionGeneratorConfig,
}

impl Default for MotionScenarioConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            motion_frames: [12, 68],
            still_frames: [30, 60],
            press_probability: 0.5,
            features: MotionGeneratorConfig::default(),
        }
    }
}

impl MotionScenarioConfig {
    pub fn validate(&self, session: &SessionConfig) -> Result<()> {
        let [m0, m1] = self.motion_frames;
        let [s0, s1] = self.still_frames;
        if m0 > m1 || s0 > s1 || m0 == 0 {
            return Err(Error::invalid("episode length ranges must be non-empty and positive"));
        }
        if m0 < session.delay_frames.max(1) {
            return Err(Error::invalid("motion episodes must be at least the activation delay"));
        }
        if s0 < session.cooldown_frames + 1 {
            return Err(Error::invalid("still episodes must outlast the cooldown"));
        }
        if !(self.press_probability > 0.0 && self.press_probability <= 1.0) {
            return Err(Error::invalid("press probability must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Still episode, then motion episode, repeated. Still frames come from the
/// negative generator and motion frames from the positive one.
pub fn generate_motion_scenario(cfg: &MotionScenarioConfig, session: &SessionConfig, seed: u64) -> Result<Scenario> {
    cfg.validate(session)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenario = Scenario::default();
    for _ in 0..cfg.episodes {
        let still = rng.random_range(cfg.still_frames[0]..=cfg.still_frames[1]);
        for _ in 0..still {
            scenario.frames.push(negative_features(&mut rng, &cfg.features));
        }
        let motion = rng.random_range(cfg.motion_frames[0]..=cfg.motion_frames[1]);
        for _ in 0..motion {
            if rng.random_bool(cfg.press_probability) {
                scenario.shutter_frames.push(scenario.frames.len());
            }
            scenario.frames.push(positive_features(&mut rng, &cfg.features));
        }
    }
    Ok(scenario)
}

/// Expected fraction of presses that land in the activation gap: with
/// presses uniform over motion frames and every episode starting from an
/// idle UW camera, each episode contributes `delay` gap frames out of a mean
/// episode length.
pub fn missed_fraction_closed_form(delay_frames: usize, mean_motion_frames: f64) -> f64 {
    (delay_frames as f64 / mean_motion_frames).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SvmModel {
        // Positive above 2 px of face flow.
        SvmModel {
            weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            bias: 0.0,
            feature_means: [2.0, 0.0, 0.0, 0.0, 0.0],
            feature_stds: [1.0; 5],
        }
    }

    fn frame(flow: f64) -> MotionFeatures {
        MotionFeatures {
            avg_face_flow: flow,
            max_flow: flow,
            avg_face_gradient: 0.02,
            exposure_time_s: 1.0 / 60.0,
            sensor_gain: 50.0,
        }
    }

    fn onset_scenario(onset: usize, len: usize) -> Scenario {
        Scenario {
            frames: (0..len).map(|t| frame(if t >= onset { 6.0 } else { 0.5 })).collect(),
            shutter_frames: vec![onset + 3, onset + 20],
        }
    }

    #[test]
    fn still_scene_never_streams() {
        let s = Scenario {
            frames: vec![frame(0.2); 200],
            shutter_frames: vec![10, 150],
        };
        let r = simulate_session(&s, &model(), &SessionConfig::default(), 0).unwrap();
        assert_eq!(r.duty_cycle, 0.0);
        assert_eq!(r.fused_presses, 0);
        assert_eq!(r.missed_presses, 0);
        assert!(r.press_outcomes.iter().all(|p| p.pairing.is_none()));
    }

    #[test]
    fn first_uw_frame_follows_delay() {
        let r = simulate_session(&onset_scenario(100, 200), &model(), &SessionConfig::default(), 0).unwrap();
        assert_eq!(
            r.activations,
            vec![Activation {
                onset_frame: 100,
                first_uw_frame: 107
            }]
        );
        assert!(r.timeline[..107].iter().all(|f| f.uw_timestamp_us.is_none()));
        assert!(r.timeline[107].uw_timestamp_us.is_some());
        assert_eq!(r.missed_presses, 1);
        assert_eq!(r.fused_presses, 1);
        assert_eq!(r.uw_frames, 93);
    }

    #[test]
    fn cooldown_stops_stream() {
        let mut s = onset_scenario(10, 100);
        for f in &mut s.frames[40..] {
            *f = frame(0.0);
        }
        s.shutter_frames = vec![90];
        let cfg = SessionConfig::default();
        let r = simulate_session(&s, &model(), &cfg, 0).unwrap();
        // Streams on frames 17..=53: the 15th negative decision is frame 54.
        assert_eq!(r.uw_frames, 54 - 17);
        assert!(!r.press_outcomes[0].pairing.as_ref().unwrap().is_paired());
    }

    #[test]
    fn uw_phase_converges() {
        let r = simulate_session(&onset_scenario(0, 80), &model(), &SessionConfig::default(), 5).unwrap();
        let last = r.timeline.last().unwrap().phase_error_us.unwrap();
        assert!(last.abs() < 1_000, "{last}");
    }

    #[test]
    fn reports_repeat_and_serialize() {
        let s = onset_scenario(30, 120);
        let a = simulate_session(&s, &model(), &SessionConfig::default(), 3).unwrap();
        let b = simulate_session(&s, &model(), &SessionConfig::default(), 3).unwrap();
        assert_eq!(a, b);
        let back: SessionReport = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        let mut csv = Vec::new();
        a.write_timeline_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 121);
    }

    #[test]
    fn malformed_scenarios_rejected() {
        assert!(Scenario::from_json("{\"frames\": [], \"shutter_frames\": [0]}").is_err());
        assert!(Scenario::from_json("[1, 2]").is_err());
        let mut s = onset_scenario(1, 10);
        s.frames[2].sensor_gain = -1.0;
        assert!(simulate_session(&s, &model(), &SessionConfig::default(), 0).is_err());
    }

    #[test]
    fn generated_scenario_respects_bounds() {
        let session = SessionConfig::default();
        let cfg = MotionScenarioConfig {
            episodes: 5,
            ..Default::default()
        };
        let s = generate_motion_scenario(&cfg, &session, 1).unwrap();
        s.validate().unwrap();
        assert!(s.frames.len() >= 5 * 40 && s.frames.len() <= 5 * 130);
        let bad = MotionScenarioConfig {
            motion_frames: [3, 10],
            ..cfg
        };
        assert!(generate_motion_scenario(&bad, &session, 1).is_err());
    }
}
