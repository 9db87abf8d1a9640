//! Three-microphone adaptive noise canceller with a one-second coefficient
//! freeze.
//!
//! The primary input is the center (omni) microphone delayed by half the
//! filter length. Two reference inputs are differences between ring
//! microphones and the center. An NLMS filter adapts continuously to predict
//! the primary from the references, but the coefficients applied to produce
//! the output at time `t` are a snapshot taken one second earlier. Anything
//! heard in the last second (for instance the keyword) therefore cannot
//! shape the filter that is currently cancelling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::array::MultichannelClip;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AncConfig {
    /// Ring microphones whose difference to the center form the references.
    pub reference_mics: [usize; 2],
    pub taps: usize,
    pub step_size: f64,
    pub regularization: f64,
    /// Age of the applied coefficients in seconds.
    pub freeze_s: f64,
    /// Snapshot spacing in samples.
    pub snapshot_hop: usize,
    /// Clips shorter than this pass the omni channel through unchanged.
    pub min_history_s: f64,
    pub sample_rate: u32,
}

impl Default for AncConfig {
    fn default() -> Self {
        Self {
            reference_mics: [1, 4],
            taps: 128,
            step_size: 0.05,
            regularization: 1e-6,
            freeze_s: 1.0,
            snapshot_hop: 160,
            min_history_s: 1.2,
            sample_rate: crate::SAMPLE_RATE,
        }
    }
}

impl AncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps < 2 || self.snapshot_hop == 0 {
            return Err(Error::Config("ANC needs at least 2 taps and a non-zero hop".into()));
        }
        if self.reference_mics[0] == self.reference_mics[1] || self.reference_mics.contains(&0) {
            return Err(Error::Config(format!(
                "ANC reference mics must be two distinct ring microphones, got {:?}",
                self.reference_mics
            )));
        }
        if !(self.step_size > 0.0 && self.step_size < 2.0) || !(self.regularization > 0.0) {
            return Err(Error::Config("NLMS step must lie in (0, 2) and regularization be positive".into()));
        }
        Ok(())
    }

    fn freeze_hops(&self) -> usize {
        ((self.freeze_s * self.sample_rate as f64) / self.snapshot_hop as f64).round() as usize
    }

    /// Output latency of the streaming processor in samples.
    pub fn latency(&self) -> usize {
        self.taps / 2
    }
}

/// Newest-first history of one input, stored twice so that any window is a
/// contiguous slice.
#[derive(Debug, Clone)]
struct TapLine {
    buf: Vec<f64>,
    pos: usize,
    len: usize,
}

impl TapLine {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; 2 * len],
            pos: 0,
            len,
        }
    }

    /// Pushes a sample and returns the one that fell out.
    fn push(&mut self, x: f64) -> f64 {
        self.pos = if self.pos == 0 { self.len - 1 } else { self.pos - 1 };
        let old = self.buf[self.pos];
        self.buf[self.pos] = x;
        self.buf[self.pos + self.len] = x;
        old
    }

    fn window(&self) -> &[f64] {
        &self.buf[self.pos..self.pos + self.len]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::net::layers::dot(a, b)
}

/// Streaming canceller state for one audio stream.
#[derive(Debug, Clone)]
pub struct AncState {
    config: AncConfig,
    refs: [TapLine; 2],
    primary: VecDeque<f64>,
    coeffs: Vec<f64>,
    frozen: Vec<f64>,
    snapshots: VecDeque<Vec<f64>>,
    spare: Vec<Vec<f64>>,
    ref_power: f64,
    samples: u64,
}

impl AncState {
    pub fn new(config: AncConfig) -> Result<Self> {
        config.validate()?;
        let taps = config.taps;
        let delay = config.latency();
        let hops = config.freeze_hops();
        Ok(Self {
            refs: [TapLine::new(taps), TapLine::new(taps)],
            primary: std::iter::repeat_n(0.0, delay).collect(),
            coeffs: vec![0.0; 2 * taps],
            frozen: vec![0.0; 2 * taps],
            snapshots: VecDeque::with_capacity(hops + 1),
            spare: Vec::new(),
            ref_power: 0.0,
            samples: 0,
            config,
        })
    }

    pub fn config(&self) -> &AncConfig {
        &self.config
    }

    /// Coefficients currently being adapted (first reference, then second).
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients applied to the output, one second old.
    pub fn applied_coefficients(&self) -> &[f64] {
        &self.frozen
    }

    /// Processes one sample of the center and the two reference microphones.
    pub fn process(&mut self, omni: f64, ref_a: f64, ref_b: f64) -> f64 {
        let taps = self.config.taps;
        let ua = ref_a - omni;
        let ub = ref_b - omni;
        let out_a = self.refs[0].push(ua);
        let out_b = self.refs[1].push(ub);
        self.ref_power += ua * ua + ub * ub - out_a * out_a - out_b * out_b;

        self.primary.push_back(omni);
        let desired = self.primary.pop_front().unwrap_or(0.0);

        let (wa, wb) = self.coeffs.split_at_mut(taps);
        let xa = self.refs[0].window();
        let xb = self.refs[1].window();
        let estimate = dot(wa, xa) + dot(wb, xb);
        let err = desired - estimate;
        let scale = self.config.step_size * err / (self.ref_power.max(0.0) + self.config.regularization);
        for (w, x) in wa.iter_mut().zip(xa) {
            *w += scale * x;
        }
        for (w, x) in wb.iter_mut().zip(xb) {
            *w += scale * x;
        }
        let (fa, fb) = self.frozen.split_at(taps);
        let output = desired - dot(fa, xa) - dot(fb, xb);

        self.samples += 1;
        if self.samples.is_multiple_of(self.config.snapshot_hop as u64) {
            self.snapshot();
        }
        output
    }

    fn snapshot(&mut self) {
        // refresh the running power to keep rounding drift bounded
        self.ref_power = self.refs.iter().map(|r| dot(r.window(), r.window())).sum();
        let mut snap = self.spare.pop().unwrap_or_default();
        snap.clear();
        snap.extend_from_slice(&self.coeffs);
        self.snapshots.push_back(snap);
        if self.snapshots.len() > self.config.freeze_hops() {
            if let Some(old) = self.snapshots.pop_front() {
                let prev = std::mem::replace(&mut self.frozen, old);
                self.spare.push(prev);
            }
        }
    }

    /// Seconds of coefficient history currently buffered.
    pub fn history_s(&self) -> f64 {
        (self.snapshots.len() * self.config.snapshot_hop) as f64 / self.config.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AncOutput {
    pub samples: Vec<f64>,
    /// True when the clip was too short to build the noise model and the
    /// omni channel was passed through.
    pub passthrough: bool,
}

/// Runs the canceller over a whole clip, aligned to the omni channel.
pub fn anc_process(clip: &MultichannelClip, config: &AncConfig) -> Result<AncOutput> {
    config.validate()?;
    let [a, b] = config.reference_mics;
    if clip.num_channels() < 3 || a >= clip.num_channels() || b >= clip.num_channels() {
        return Err(Error::Config(format!(
            "ANC needs the center and mics {a}, {b}; clip has {} channels",
            clip.num_channels()
        )));
    }
    let omni = clip.channel_f64(0);
    let n = omni.len();
    if (n as f64) < config.min_history_s * clip.sample_rate as f64 {
        return Ok(AncOutput {
            samples: omni,
            passthrough: true,
        });
    }
    let mut state = AncState::new(config.clone())?;
    let lat = config.latency();
    let ra = &clip.channels[a];
    let rb = &clip.channels[b];
    let mut samples = Vec::with_capacity(n);
    for t in 0..n + lat {
        let (o, x, y) = if t < n {
            (omni[t], ra[t] as f64, rb[t] as f64)
        } else {
            (0.0, 0.0, 0.0)
        };
        let out = state.process(o, x, y);
        if t >= lat {
            samples.push(out);
        }
    }
    Ok(AncOutput {
        samples,
        passthrough: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{ClipMeta, Label};

    fn clip_of(channels: Vec<Vec<f32>>) -> MultichannelClip {
        MultichannelClip {
            channels,
            sample_rate: 16000,
            label: Label::Negative,
            meta: ClipMeta::default(),
        }
    }

    #[test]
    fn silence_in_silence_out() {
        let clip = clip_of(vec![vec![0.0; 32000]; 7]);
        let out = anc_process(&clip, &AncConfig::default()).unwrap();
        assert!(!out.passthrough);
        assert!(out.samples.iter().all(|&s| s == 0.0));
        assert_eq!(out.samples.len(), 32000);
    }

    #[test]
    fn short_clip_passes_through() {
        let ch: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.01).sin() * 0.1).collect();
        let clip = clip_of(vec![ch.clone(); 7]);
        let out = anc_process(&clip, &AncConfig::default()).unwrap();
        assert!(out.passthrough);
        assert_eq!(out.samples, ch.iter().map(|&s| s as f64).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_channels() {
        let clip = clip_of(vec![vec![0.0; 32000]; 2]);
        assert!(matches!(anc_process(&clip, &AncConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn snapshot_buffer_covers_one_second() {
        let mut st = AncState::new(AncConfig::default()).unwrap();
        for i in 0..40000 {
            st.process((i as f64 * 0.1).sin(), 0.0, 0.0);
        }
        assert!(st.history_s() >= 1.0);
        assert!(st.applied_coefficients().iter().all(|c| c.is_finite()));
    }
}
