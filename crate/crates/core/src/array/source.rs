//! Far-field propagation of point sources onto the array and record mixing.

use serde::{Deserialize, Serialize};

use super::geometry::ArrayGeometry;
use crate::dsp::fracdelay::FractionalDelay;
use crate::{Error, Result};

/// Level that maps onto a digital RMS of [`REFERENCE_RMS`].
pub const REFERENCE_DB_SPL: f64 = 94.0;
pub const REFERENCE_RMS: f64 = 0.1;

/// Digital RMS for a level in dB SPL.
pub fn level_to_rms(level_db_spl: f64) -> f64 {
    REFERENCE_RMS * 10f64.powf((level_db_spl - REFERENCE_DB_SPL) / 20.0)
}

/// A point source around the array.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub azimuth_deg: f64,
    pub distance_m: f64,
    pub level_db_spl: f64,
    pub waveform: Vec<f32>,
    /// Sample offset of the waveform inside the rendered clip.
    pub onset: usize,
}

impl SourceSpec {
    pub fn new(azimuth_deg: f64, level_db_spl: f64, waveform: Vec<f32>) -> Self {
        Self {
            azimuth_deg: azimuth_deg.rem_euclid(360.0),
            distance_m: 2.0,
            level_db_spl,
            waveform,
            onset: 0,
        }
    }

    pub fn with_onset(mut self, onset: usize) -> Self {
        self.onset = onset;
        self
    }

    /// Rendered length in samples.
    pub fn span(&self) -> usize {
        self.onset + self.waveform.len()
    }

    /// Waveform scaled so that its RMS over the active region (first to last
    /// non-zero sample) equals the calibrated level. Silence stays silence.
    pub fn calibrated(&self) -> Vec<f64> {
        let first = self.waveform.iter().position(|&s| s != 0.0);
        let last = self.waveform.iter().rposition(|&s| s != 0.0);
        let (Some(first), Some(last)) = (first, last) else {
            return vec![0.0; self.waveform.len()];
        };
        let active = &self.waveform[first..=last];
        let power = active.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / active.len() as f64;
        let gain = level_to_rms(self.level_db_spl) / power.sqrt();
        self.waveform.iter().map(|&s| s as f64 * gain).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Negative,
    /// Keyword occupying samples `start..end`.
    Keyword { start: usize, end: usize },
}

impl Label {
    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Keyword { .. })
    }

    pub fn span(&self) -> Option<(usize, usize)> {
        match *self {
            Label::Keyword { start, end } => Some((start, end)),
            Label::Negative => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub snr_db: Option<f64>,
    pub noise_type: Option<String>,
    pub keyword_azimuth_deg: Option<f64>,
    pub noise_azimuth_deg: Option<f64>,
    pub warnings: Vec<String>,
    pub seed: u64,
}

/// Synchronized multichannel audio with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelClip {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
    pub label: Label,
    pub meta: ClipMeta,
}

impl MultichannelClip {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel_f64(&self, m: usize) -> Vec<f64> {
        self.channels[m].iter().map(|&s| s as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Data("channels differ in length".into()));
        }
        if let Some((s, e)) = self.label.span() {
            if s >= e || e > n {
                return Err(Error::Data(format!("keyword span {s}..{e} outside 0..{n}")));
            }
        }
        Ok(())
    }

    /// Builds a clip from double-precision channels, clamped to ±1.
    pub fn from_f64(channels: Vec<Vec<f64>>, sample_rate: u32, label: Label, meta: ClipMeta) -> Self {
        let channels = channels
            .into_iter()
            .map(|c| c.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect())
            .collect();
        Self {
            channels,
            sample_rate,
            label,
            meta,
        }
    }
}

/// Renders `source` on every microphone in double precision.
pub fn propagate_f64(geometry: &ArrayGeometry, source: &SourceSpec) -> Result<Vec<Vec<f64>>> {
    geometry.validate()?;
    if !(source.distance_m > geometry.radius()) {
        return Err(Error::Geometry(format!(
            "source at {} m is inside the array radius {} m",
            source.distance_m,
            geometry.radius()
        )));
    }
    let calibrated = source.calibrated();
    let n = source.span();
    let mut padded = vec![0.0; n];
    padded[source.onset..].copy_from_slice(&calibrated);
    Ok((0..geometry.num_mics())
        .map(|m| {
            let d = FractionalDelay::new(geometry.delay_samples(m, source.azimuth_deg));
            d.apply(&padded)
        })
        .collect())
}

/// Plane-wave far-field propagation of a single source.
pub fn propagate(geometry: &ArrayGeometry, source: &SourceSpec) -> Result<MultichannelClip> {
    if source.waveform.is_empty() {
        return Err(Error::Config("source waveform is empty".into()));
    }
    let channels = propagate_f64(geometry, source)?;
    Ok(MultichannelClip::from_f64(
        channels,
        geometry.sample_rate,
        Label::Negative,
        ClipMeta::default(),
    ))
}

/// Sample-wise sum of channel sets, padded to the longest.
pub(crate) fn sum_channels(parts: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mics = parts.iter().map(Vec::len).max().unwrap_or(0);
    let n = parts
        .iter()
        .flat_map(|p| p.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut out = vec![vec![0.0; n]; mics];
    for part in parts {
        for (dst, src) in out.iter_mut().zip(part) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// One lab record: a keyword source and a noise source playing together.
pub fn mix_lab_record(
    geometry: &ArrayGeometry,
    keyword: &SourceSpec,
    noise: &SourceSpec,
    seed: u64,
) -> Result<MultichannelClip> {
    let k = propagate_f64(geometry, keyword)?;
    let n = propagate_f64(geometry, noise)?;
    let mixed = sum_channels(&[k, n]);
    let len = mixed[0].len();
    let mut warnings = Vec::new();
    if azimuth_gap(keyword.azimuth_deg, noise.azimuth_deg) < 5.0 {
        warnings.push(format!(
            "keyword ({:.1}°) and noise ({:.1}°) sources are less than 5° apart",
            keyword.azimuth_deg, noise.azimuth_deg
        ));
    }
    let start = keyword.onset.min(len.saturating_sub(1));
    let end = keyword.span().min(len);
    let label = if end > start {
        Label::Keyword { start, end }
    } else {
        Label::Negative
    };
    let meta = ClipMeta {
        snr_db: Some(keyword.level_db_spl - noise.level_db_spl),
        noise_type: None,
        keyword_azimuth_deg: Some(keyword.azimuth_deg),
        noise_azimuth_deg: Some(noise.azimuth_deg),
        warnings,
        seed,
    };
    Ok(MultichannelClip::from_f64(mixed, geometry.sample_rate, label, meta))
}
