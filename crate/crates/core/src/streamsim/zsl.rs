//! Zero-shutter-lag ring buffers and W/UW frame pairing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Camera;

/// Largest W/UW timestamp difference accepted as a pair.
pub const MAX_PAIR_DIFF_US: i64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub camera: Camera,
    pub timestamp_us: i64,
    pub frame_index: u64,
    pub exposure_time_s: f64,
    pub gain: f64,
}

/// Fixed-capacity FIFO of frames from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBuffer {
    capacity: usize,
    entries: VecDeque<FrameEvent>,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("ring buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &FrameEvent> {
        self.entries.iter()
    }

    pub fn latest(&self) -> Option<&FrameEvent> {
        self.entries.back()
    }

    /// Appends a frame, evicting the oldest one when full. Timestamps must
    /// increase strictly.
    pub fn push(&mut self, frame: FrameEvent) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if frame.timestamp_us <= last.timestamp_us {
                return Err(Error::invalid(format!(
                    "frame timestamp {} does not follow {}",
                    frame.timestamp_us, last.timestamp_us
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(frame);
        Ok(())
    }

    /// Entry closest to `t_us`; of two equidistant entries the earlier wins.
    pub fn nearest(&self, t_us: i64) -> Option<&FrameEvent> {
        let mut best: Option<&FrameEvent> = None;
        for e in &self.entries {
            let d = (e.timestamp_us - t_us).abs();
            if best.is_none_or(|b| d < (b.timestamp_us - t_us).abs()) {
                best = Some(e);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ZslPairing {
    Paired { w: FrameEvent, uw: FrameEvent, diff_us: i64 },
    /// The nearest UW frame is further than the pairing limit.
    Unpaired { w: FrameEvent, nearest_uw: FrameEvent, diff_us: i64 },
}

impl ZslPairing {
    pub fn is_paired(&self) -> bool {
        matches!(self, ZslPairing::Paired { .. })
    }
}

/// Picks the W frame nearest the shutter time and the UW frame nearest that
/// W frame. Pairs further apart than `max_diff_us` are reported as unpaired.
pub fn zsl_pair(w_ring: &RingBuffer, uw_ring: &RingBuffer, shutter_us: i64, max_diff_us: i64) -> Result<ZslPairing> {
    let w = *w_ring.nearest(shutter_us).ok_or(Error::EmptyRing("W"))?;
    let uw = *uw_ring.nearest(w.timestamp_us).ok_or(Error::EmptyRing("UW"))?;
    let diff_us = (uw.timestamp_us - w.timestamp_us).abs();
    Ok(if diff_us <= max_diff_us {
        ZslPairing::Paired { w, uw, diff_us }
    } else {
        ZslPairing::Unpaired {
            w,
            nearest_uw: uw,
            diff_us,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(camera: Camera, t: i64, i: u64) -> FrameEvent {
        FrameEvent {
            camera,
            timestamp_us: t,
            frame_index: i,
            exposure_time_s: 0.01,
            gain: 10.0,
        }
    }

    fn ring(camera: Camera, times: &[i64]) -> RingBuffer {
        let mut r = RingBuffer::new(16).unwrap();
        for (i, &t) in times.iter().enumerate() {
            r.push(frame(camera, t, i as u64)).unwrap();
        }
        r
    }

    #[test]
    fn offset_stream_pairs() {
        let w: Vec<i64> = (0..10).map(|i| i * 33_333).collect();
        let uw: Vec<i64> = w.iter().map(|t| t + 3_000).collect();
        let (w, uw) = (ring(Camera::W, &w), ring(Camera::UW, &uw));
        for shutter in [0, 50_000, 170_000, 400_000] {
            match zsl_pair(&w, &uw, shutter, MAX_PAIR_DIFF_US).unwrap() {
                ZslPairing::Paired { diff_us, .. } => assert_eq!(diff_us, 3_000),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn stale_uw_is_unpaired() {
        let w = ring(Camera::W, &[1_000_000, 1_033_333]);
        let uw = ring(Camera::UW, &[500_000, 533_333]);
        assert!(!zsl_pair(&w, &uw, 1_033_333, MAX_PAIR_DIFF_US).unwrap().is_paired());
    }

    #[test]
    fn ties_pick_earlier_frame() {
        let w = ring(Camera::W, &[100_000]);
        let uw = ring(Camera::UW, &[90_000, 110_000]);
        match zsl_pair(&w, &uw, 100_000, MAX_PAIR_DIFF_US).unwrap() {
            ZslPairing::Paired { uw, .. } => assert_eq!(uw.timestamp_us, 90_000),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_ring_errors() {
        let w = ring(Camera::W, &[0]);
        let uw = RingBuffer::new(4).unwrap();
        assert!(matches!(zsl_pair(&w, &uw, 0, MAX_PAIR_DIFF_US), Err(Error::EmptyRing("UW"))));
        assert!(RingBuffer::new(0).is_err());
    }

    #[test]
    fn timestamps_must_increase() {
        let mut r = ring(Camera::W, &[10]);
        assert!(r.push(frame(Camera::W, 10, 1)).is_err());
    }

    proptest! {
        #[test]
        fn ring_keeps_newest_within_capacity(cap in 1usize..10, steps in prop::collection::vec(1i64..1000, 0..40)) {
            let mut r = RingBuffer::new(cap).unwrap();
            let mut t = 0;
            let mut all = Vec::new();
            for (i, s) in steps.iter().enumerate() {
                t += s;
                r.push(frame(Camera::W, t, i as u64)).unwrap();
                all.push(t);
                prop_assert!(r.len() <= cap);
            }
            let kept: Vec<i64> = r.entries().map(|e| e.timestamp_us).collect();
            prop_assert_eq!(kept, all[all.len().saturating_sub(cap)..].to_vec());
        }

        #[test]
        fn pairs_respect_limit(
            w in prop::collection::btree_set(0i64..2_000_000, 1..12),
            uw in prop::collection::btree_set(0i64..2_000_000, 1..12),
            shutter in 0i64..2_000_000,
        ) {
            let w: Vec<i64> = w.into_iter().collect();
            let uw: Vec<i64> = uw.into_iter().collect();
            let p = zsl_pair(&ring(Camera::W, &w), &ring(Camera::UW, &uw), shutter, MAX_PAIR_DIFF_US).unwrap();
            match p {
                ZslPairing::Paired { w, uw, diff_us } => {
                    prop_assert!(diff_us <= MAX_PAIR_DIFF_US);
                    prop_assert_eq!(diff_us, (w.timestamp_us - uw.timestamp_us).abs());
                }
                ZslPairing::Unpaired { diff_us, .. } => prop_assert!(diff_us > MAX_PAIR_DIFF_US),
            }
        }
    }
}
