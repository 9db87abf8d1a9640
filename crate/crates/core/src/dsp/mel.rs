//! 40-band log-Mel features over 25 ms frames with a 10 ms hop.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::SAMPLE_RATE,
            frame_len: 400,
            hop: 160,
            fft_len: 512,
            n_mels: 40,
            f_min: 125.0,
            f_max: 7500.0,
            log_floor: 1e-7,
        }
    }
}

impl MelConfig {
    /// Frames produced for `n` input samples.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.frame_len {
            0
        } else {
            (n - self.frame_len) / self.hop + 1
        }
    }
}

/// Row-major `frames × dim` feature matrix for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub channel_tag: String,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, channel_tag: impl Into<String>) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
            channel_tag: channel_tag.into(),
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    /// Keeps frames `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> FeatureMatrix {
        let end = end.min(self.frames);
        let start = start.min(end);
        FeatureMatrix {
            frames: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            channel_tag: self.channel_tag.clone(),
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filter: first FFT bin and weights.
#[derive(Debug, Clone)]
struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

/// Reusable log-Mel extractor.
#[derive(Clone)]
pub struct LogMel {
    config: MelConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("config", &self.config).finish()
    }
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

impl LogMel {
    pub fn new(config: MelConfig) -> Self {
        let n = config.frame_len;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect();
        let bins = config.fft_len / 2 + 1;
        let bin_hz = config.sample_rate as f64 / config.fft_len as f64;
        let (m_lo, m_hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let filters = (0..config.n_mels)
            .map(|j| {
                let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
                let mut start = None;
                let mut weights = Vec::new();
                for k in 0..bins {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        start.get_or_insert(k);
                        weights.push(w);
                    } else if start.is_some() {
                        break;
                    }
                }
                MelFilter {
                    start: start.unwrap_or(0),
                    weights,
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_len);
        Self {
            config,
            window,
            filters,
            fft,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Log-Mel energies of one frame of `frame_len` samples.
    pub fn frame_into(&self, frame: &[f64], scratch: &mut Vec<Complex<f64>>, out: &mut [f32]) {
        scratch.clear();
        scratch.extend(frame.iter().zip(&self.window).map(|(x, w)| Complex::new(x * w, 0.0)));
        scratch.resize(self.config.fft_len, Complex::new(0.0, 0.0));
        self.fft.process(scratch);
        for (filter, o) in self.filters.iter().zip(out.iter_mut()) {
            let e: f64 = filter
                .weights
                .iter()
                .zip(&scratch[filter.start..])
                .map(|(w, c)| w * c.norm_sqr())
                .sum();
            *o = e.max(self.config.log_floor).ln() as f32;
        }
    }

    pub fn compute(&self, samples: &[f64], channel_tag: &str) -> FeatureMatrix {
        let frames = self.config.num_frames(samples.len());
        let mut fm = FeatureMatrix::new(frames, self.config.n_mels, channel_tag);
        let mut scratch = Vec::with_capacity(self.config.fft_len);
        for t in 0..frames {
            let start = t * self.config.hop;
            let frame = &samples[start..start + self.config.frame_len];
            let out = &mut fm.data[t * self.config.n_mels..(t + 1) * self.config.n_mels];
            self.frame_into(frame, &mut scratch, out);
        }
        fm
    }
}

/// Log-Mel features with the default configuration.
pub fn log_mel(samples: &[f64]) -> FeatureMatrix {
    LogMel::default().compute(samples, "mono")
}
