//! Event extraction from posterior sequences and multi-model decisions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::net::layers::Scalar;
use crate::net::network::{check_aligned, KwsNetwork};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    /// Sliding-max window, frames.
    pub window: usize,
    /// Minimum distance between events, frames.
    pub refractory: usize,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            window: 30,
            refractory: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub frame: usize,
    /// Sliding-max posterior at the event frame.
    pub confidence: f32,
}

impl DetectionEvent {
    pub fn time_s(&self, hop: usize, sample_rate: u32) -> f64 {
        (self.frame * hop) as f64 / sample_rate as f64
    }
}

/// Frame-by-frame event detector with one frame of look-ahead.
///
/// Frame `t` fires when its sliding max `m_t` exceeds the threshold, is a
/// local maximum (`m_{t-1} <= m_t >= m_{t+1}`) and at least `refractory`
/// frames have passed since the previous event.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    threshold: f32,
    config: EventConfig,
    window: VecDeque<(usize, f32)>,
    frame: usize,
    before: f32,
    pending: Option<f32>,
    last_event: Option<usize>,
}

impl StreamingDetector {
    pub fn new(threshold: f32, config: EventConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(Error::Config("event window must be at least one frame".into()));
        }
        Ok(Self {
            threshold,
            config,
            window: VecDeque::new(),
            frame: 0,
            before: f32::NEG_INFINITY,
            pending: None,
            last_event: None,
        })
    }

    fn decide(&mut self, t: usize, m: f32, after: f32) -> Option<DetectionEvent> {
        let clear = self.last_event.is_none_or(|l| t - l >= self.config.refractory);
        let fire = m > self.threshold && m >= self.before && m >= after && clear;
        self.before = m;
        if fire {
            self.last_event = Some(t);
            Some(DetectionEvent { frame: t, confidence: m })
        } else {
            None
        }
    }

    /// Adds the posterior for the next frame; may emit an event for the previous one.
    pub fn push(&mut self, posterior: f32) -> Option<DetectionEvent> {
        let t = self.frame;
        self.frame += 1;
        while self.window.back().is_some_and(|&(_, v)| v <= posterior) {
            self.window.pop_back();
        }
        self.window.push_back((t, posterior));
        while self.window.front().is_some_and(|&(i, _)| i + self.config.window <= t) {
            self.window.pop_front();
        }
        let m = self.window.front().map_or(posterior, |&(_, v)| v);
        let out = match self.pending {
            Some(prev) => self.decide(t - 1, prev, m),
            None => None,
        };
        self.pending = Some(m);
        out
    }

    /// Resolves the final frame at the end of the stream.
    pub fn finish(&mut self) -> Option<DetectionEvent> {
        let prev = self.pending.take()?;
        self.decide(self.frame - 1, prev, f32::NEG_INFINITY)
    }
}

pub fn detect_events(posteriors: &[f32], threshold: f32, config: EventConfig) -> Result<Vec<DetectionEvent>> {
    let mut det = StreamingDetector::new(threshold, config)?;
    let mut out: Vec<DetectionEvent> = posteriors.iter().filter_map(|&p| det.push(p)).collect();
    out.extend(det.finish());
    Ok(out)
}

/// Runs a network over a channel bank and extracts events in one pass.
pub fn detect_stream<T: Scalar>(
    network: &KwsNetwork<T>,
    channels: &[FeatureMatrix],
    threshold: f32,
    config: EventConfig,
) -> Result<Vec<DetectionEvent>> {
    let frames = check_aligned(channels)?;
    let mut state = network.new_state(channels.len())?;
    let mut det = StreamingDetector::new(threshold, config)?;
    let mut out = Vec::new();
    let mut rows = Vec::with_capacity(channels.len());
    for t in 0..frames {
        rows.clear();
        rows.extend(channels.iter().map(|c| c.frame(t)));
        let p = network.step(&mut state, &rows)?;
        out.extend(det.push(p));
    }
    out.extend(det.finish());
    Ok(out)
}

/// Fires when any model's confidence exceeds its own threshold.
pub fn ensemble_decide(confidences: &[f32], thresholds: &[f32]) -> Result<bool> {
    if confidences.len() != thresholds.len() {
        return Err(Error::Shape(format!(
            "{} confidences for {} thresholds",
            confidences.len(),
            thresholds.len()
        )));
    }
    Ok(confidences.iter().zip(thresholds).any(|(c, t)| c > t))
}

/// Best-channel confidence.
pub fn oracle_fuse(confidences: &[f32]) -> f32 {
    confidences.iter().copied().fold(f32::NEG_INFINITY, f32::max)
}
