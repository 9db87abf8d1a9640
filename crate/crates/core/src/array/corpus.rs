//! Synthetic keyword-spotting corpus: positives (keyword in directional
//! noise, sometimes preceded by other speech from the talker) and negatives
//! (noise with confuser phrases from random directions).

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::geometry::ArrayGeometry;
use super::record_rng;
use super::source::{propagate_f64, sum_channels, ClipMeta, Label, MultichannelClip, SourceSpec};
use super::synth::{synth_confuser, synth_keyword, synth_noise, NoiseType, VoicePreset};
use crate::par::{try_map_indexed, Execution};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub positives: usize,
    pub negatives: usize,
    pub positive_clip_s: f64,
    pub negative_clip_s: f64,
    /// Keyword level minus noise level, drawn uniformly.
    pub snr_db: [f64; 2],
    pub noise_level_db: f64,
    pub keyword_onset_s: [f64; 2],
    /// Probability that the talker says something else before the keyword.
    pub pre_speech_prob: f64,
    /// Expected number of confuser phrases per second of negative audio.
    pub confusers_per_s: f64,
    pub noise_types: Vec<NoiseType>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            positives: 400,
            negatives: 400,
            positive_clip_s: 3.0,
            negative_clip_s: 3.0,
            snr_db: [-15.0, 15.0],
            noise_level_db: 60.0,
            keyword_onset_s: [1.9, 2.25],
            pre_speech_prob: 0.2,
            confusers_per_s: 0.4,
            noise_types: NoiseType::ALL.to_vec(),
        }
    }
}

impl CorpusSpec {
    pub fn len(&self) -> usize {
        self.positives + self.negatives
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hours of negative audio.
    pub fn negative_hours(&self) -> f64 {
        self.negatives as f64 * self.negative_clip_s / 3600.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_types.is_empty() {
            return Err(Error::Config("corpus needs at least one noise type".into()));
        }
        if self.snr_db[0] > self.snr_db[1] || self.keyword_onset_s[0] > self.keyword_onset_s[1] {
            return Err(Error::Config("empty SNR or onset range".into()));
        }
        if self.keyword_onset_s[1] + 0.75 > self.positive_clip_s {
            return Err(Error::Config("keyword onsets do not fit the positive clip length".into()));
        }
        if !(0.0..=1.0).contains(&self.pre_speech_prob) || self.confusers_per_s < 0.0 {
            return Err(Error::Config("bad pre-speech probability or confuser rate".into()));
        }
        Ok(())
    }
}

fn place(geometry: &ArrayGeometry, az: f64, level: f64, wave: Vec<f32>, onset: usize) -> Result<Vec<Vec<f64>>> {
    propagate_f64(geometry, &SourceSpec::new(az, level, wave).with_onset(onset))
}

fn truncate(mut ch: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    for c in &mut ch {
        c.resize(n, 0.0);
    }
    ch
}

/// Clip `index` of a corpus; indices below `spec.positives` are positives.
pub fn corpus_clip(geometry: &ArrayGeometry, spec: &CorpusSpec, seed: u64, index: usize) -> Result<MultichannelClip> {
    spec.validate()?;
    let mut rng = record_rng(seed, index);
    let sr = geometry.sample_rate as f64;
    let noise_type = spec.noise_types[rng.random_range(0..spec.noise_types.len())];
    let noise_az = rng.random_range(0.0..360.0);
    let positive = index < spec.positives;
    let dur = if positive { spec.positive_clip_s } else { spec.negative_clip_s };
    let n = (dur * sr).round() as usize;
    let noise = synth_noise(noise_type, dur, rng.next_u64())?;
    let mut parts = vec![place(geometry, noise_az, spec.noise_level_db, noise, 0)?];
    let mut meta = ClipMeta {
        noise_type: Some(noise_type.name().to_string()),
        noise_azimuth_deg: Some(noise_az),
        seed,
        ..ClipMeta::default()
    };
    let label = if positive {
        let snr = rng.random_range(spec.snr_db[0]..=spec.snr_db[1]);
        let level = spec.noise_level_db + snr;
        let voice = VoicePreset::ALL[rng.random_range(0..3)];
        let kw_az = rng.random_range(0.0..360.0);
        let onset = (rng.random_range(spec.keyword_onset_s[0]..=spec.keyword_onset_s[1]) * sr) as usize;
        let keyword = synth_keyword(voice, rng.next_u64());
        let end = (onset + keyword.len()).min(n);
        let pre_speech = rng.random_bool(spec.pre_speech_prob);
        let pre_seed = rng.next_u64();
        if pre_speech {
            let phrase = synth_confuser(voice, pre_seed);
            let latest = onset.saturating_sub(phrase.len() + (0.1 * sr) as usize);
            if latest > 0 {
                let pre_onset = rng.random_range(0..latest);
                parts.push(place(geometry, kw_az, level, phrase, pre_onset)?);
            }
        }
        parts.push(place(geometry, kw_az, level, keyword, onset)?);
        meta.snr_db = Some(snr);
        meta.keyword_azimuth_deg = Some(kw_az);
        Label::Keyword { start: onset, end }
    } else {
        let expected = spec.confusers_per_s * dur;
        let count = expected.floor() as usize + usize::from(rng.random_bool(expected.fract()));
        for _ in 0..count {
            let voice = VoicePreset::ALL[rng.random_range(0..3)];
            let phrase = synth_confuser(voice, rng.next_u64());
            let level = spec.noise_level_db + rng.random_range(spec.snr_db[0]..=spec.snr_db[1]);
            let az = rng.random_range(0.0..360.0);
            let onset = rng.random_range(0..n.saturating_sub(phrase.len()).max(1));
            parts.push(place(geometry, az, level, phrase, onset)?);
        }
        Label::Negative
    };
    let mixed = truncate(sum_channels(&parts), n);
    Ok(MultichannelClip::from_f64(mixed, geometry.sample_rate, label, meta))
}

pub fn generate_corpus(geometry: &ArrayGeometry, spec: &CorpusSpec, seed: u64, exec: Execution) -> Result<Vec<MultichannelClip>> {
    spec.validate()?;
    try_map_indexed(exec, spec.len(), |i| corpus_clip(geometry, spec, seed, i))
}
