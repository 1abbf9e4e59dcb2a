//! Software timestamp synchronization of the UW stream to the W stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimestampSyncConfig {
    /// Fraction of the measured phase error removed per frame.
    pub gain: f64,
}

impl Default for TimestampSyncConfig {
    fn default() -> Self {
        Self { gain: 0.5 }
    }
}

impl TimestampSyncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain < 2.0) {
            return Err(Error::invalid("sync gain must lie in (0, 2) for a stable loop"));
        }
        Ok(())
    }
}

/// Signed offset of `uw_us` from the nearest W frame boundary, wrapped into
/// `[-interval/2, interval/2)`.
pub fn phase_error(w_us: i64, uw_us: i64, frame_interval_us: i64) -> i64 {
    let half = frame_interval_us / 2;
    (uw_us - w_us + half).rem_euclid(frame_interval_us) - half
}

/// Adjustment (µs) to add to the UW camera's next frame interval, computed
/// from the most recent timestamp of each stream. Empty inputs or a
/// non-positive interval give no adjustment.
pub fn software_timestamp_sync(w_ts: &[i64], uw_ts: &[i64], frame_interval_us: i64, cfg: &TimestampSyncConfig) -> i64 {
    let (Some(&w), Some(&uw)) = (w_ts.last(), uw_ts.last()) else {
        return 0;
    };
    if frame_interval_us <= 0 {
        return 0;
    }
    -(cfg.gain * phase_error(w, uw, frame_interval_us) as f64).round() as i64
}

/// Closed-loop run: W frames tick at a fixed interval and the UW camera
/// starts `initial_offset_us` late, applying the controller after every
/// frame. Returns the phase error of each UW frame.
pub fn simulate_timestamp_sync(
    initial_offset_us: i64,
    frames: usize,
    frame_interval_us: i64,
    cfg: &TimestampSyncConfig,
) -> Vec<i64> {
    let mut w_ts = Vec::with_capacity(frames);
    let mut uw_ts = Vec::with_capacity(frames);
    let mut errors = Vec::with_capacity(frames);
    let mut next_uw = initial_offset_us;
    for k in 0..frames {
        let w = k as i64 * frame_interval_us;
        w_ts.push(w);
        uw_ts.push(next_uw);
        errors.push(phase_error(w, next_uw, frame_interval_us));
        next_uw += frame_interval_us + software_timestamp_sync(&w_ts, &uw_ts, frame_interval_us, cfg);
    }
    errors
}
