//! Acoustic lab protocol: one keyword source and one noise source per record
//! on a 2 m circle around the device.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::geometry::ArrayGeometry;
use super::manifest::ManifestRecord;
use super::source::{mix_lab_record, MultichannelClip, SourceSpec};
use super::synth::{synth_keyword, synth_noise, NoiseType, VoicePreset};
use super::record_rng;
use crate::par::{try_map_indexed, Execution};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabProtocol {
    pub noise_types: Vec<NoiseType>,
    pub keyword_levels_db: Vec<f64>,
    pub noise_level_db: f64,
    pub records: usize,
    /// Length of every record in seconds.
    pub record_s: f64,
    /// Range of keyword onsets in seconds.
    pub keyword_onset_s: [f64; 2],
    pub source_distance_m: f64,
}

impl Default for LabProtocol {
    fn default() -> Self {
        Self {
            noise_types: NoiseType::LAB.to_vec(),
            keyword_levels_db: vec![35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0],
            noise_level_db: 60.0,
            records: 900,
            record_s: 3.5,
            keyword_onset_s: [2.1, 2.7],
            source_distance_m: 2.0,
        }
    }
}

impl LabProtocol {
    /// SNR values the protocol produces, in the order of `keyword_levels_db`.
    pub fn snr_grid(&self) -> Vec<f64> {
        self.keyword_levels_db
            .iter()
            .map(|l| l - self.noise_level_db)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_types.is_empty() || self.keyword_levels_db.is_empty() {
            return Err(Error::Config("lab protocol needs noise types and keyword levels".into()));
        }
        let [lo, hi] = self.keyword_onset_s;
        if !(lo >= 0.0 && hi >= lo && hi + 0.8 <= self.record_s) {
            return Err(Error::Config(format!(
                "keyword onsets {lo}..{hi} s do not fit a {} s record",
                self.record_s
            )));
        }
        Ok(())
    }

    /// Keyword level, noise type and voice assigned to record `index`.
    /// Levels cycle fastest, then noise types, then voices, so every
    /// combination appears equally often over full cycles.
    pub fn assignment(&self, index: usize) -> (f64, NoiseType, VoicePreset) {
        let nl = self.keyword_levels_db.len();
        let nt = self.noise_types.len();
        (
            self.keyword_levels_db[index % nl],
            self.noise_types[(index / nl) % nt],
            VoicePreset::ALL[(index / (nl * nt)) % 3],
        )
    }
}

/// Renders record `index` of the lab dataset.
pub fn lab_record(geometry: &ArrayGeometry, protocol: &LabProtocol, seed: u64, index: usize) -> Result<MultichannelClip> {
    protocol.validate()?;
    let mut rng = record_rng(seed, index);
    let (level, noise_type, voice) = protocol.assignment(index);
    let keyword_az = rng.random_range(0.0..360.0);
    let noise_az = rng.random_range(0.0..360.0);
    let sr = geometry.sample_rate as f64;
    let onset = (rng.random_range(protocol.keyword_onset_s[0]..=protocol.keyword_onset_s[1]) * sr) as usize;
    let keyword = synth_keyword(voice, rng.next_u64());
    let noise = synth_noise(noise_type, protocol.record_s, rng.next_u64())?;
    let n = noise.len();
    let mut keyword_src = SourceSpec::new(keyword_az, level, keyword).with_onset(onset);
    keyword_src.distance_m = protocol.source_distance_m;
    // keep the keyword inside the record
    let overflow = keyword_src.span().saturating_sub(n);
    keyword_src.onset -= overflow.min(keyword_src.onset);
    let mut noise_src = SourceSpec::new(noise_az, protocol.noise_level_db, noise);
    noise_src.distance_m = protocol.source_distance_m;
    let mut clip = mix_lab_record(geometry, &keyword_src, &noise_src, seed)?;
    clip.meta.noise_type = Some(noise_type.name().to_string());
    Ok(clip)
}

pub fn generate_lab_dataset(
    geometry: &ArrayGeometry,
    protocol: &LabProtocol,
    seed: u64,
    exec: Execution,
) -> Result<Vec<MultichannelClip>> {
    protocol.validate()?;
    try_map_indexed(exec, protocol.records, |i| lab_record(geometry, protocol, seed, i))
}

/// Manifest lines for a generated dataset; `paths` holds optional WAV paths.
pub fn manifest_records(clips: &[MultichannelClip], paths: Option<&[String]>) -> Vec<ManifestRecord> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestRecord::from_clip(c, i, paths.map(|p| p[i].clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_snr_grid() {
        let p = LabProtocol::default();
        assert_eq!(p.snr_grid(), vec![-25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0]);
    }

    #[test]
    fn assignment_is_balanced() {
        let p = LabProtocol::default();
        let mut counts = std::collections::HashMap::new();
        for i in 0..42 * 3 {
            let (l, t, v) = p.assignment(i);
            *counts.entry((l as i64, t, v)).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 42 * 3);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn empty_protocol_gives_empty_dataset() {
        let p = LabProtocol {
            records: 0,
            ..LabProtocol::default()
        };
        let clips = generate_lab_dataset(&ArrayGeometry::default(), &p, 1, Execution::Sequential).unwrap();
        assert!(clips.is_empty());
        assert!(manifest_records(&clips, None).is_empty());
    }

    #[test]
    fn record_is_labelled() {
        let p = LabProtocol::default();
        let g = ArrayGeometry::default();
        let clip = lab_record(&g, &p, 5, 3).unwrap();
        clip.validate().unwrap();
        assert_eq!(clip.len(), 56000);
        assert_eq!(clip.meta.snr_db, Some(-10.0));
        assert!(clip.label.is_positive());
        assert_eq!(clip, lab_record(&g, &p, 5, 3).unwrap());
    }
}
