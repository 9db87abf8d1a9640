//! 16-bit PCM multichannel WAV I/O.

use std::path::Path;

use super::manifest::ManifestRecord;
use super::source::{ClipMeta, MultichannelClip};
use crate::{Error, Result};

pub fn write_clip(path: &Path, clip: &MultichannelClip) -> Result<()> {
    clip.validate()?;
    let spec = hound::WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for t in 0..clip.len() {
        for ch in &clip.channels {
            let s = (ch[t].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(s)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads interleaved 16-bit PCM into per-channel float samples.
pub fn read_channels(path: &Path) -> Result<(Vec<Vec<f32>>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Data(format!("{}: expected 16-bit PCM", path.display())));
    }
    let nch = spec.channels as usize;
    let mut channels = vec![Vec::new(); nch];
    for (i, s) in r.samples::<i16>().enumerate() {
        channels[i % nch].push(s? as f32 / 32767.0);
    }
    Ok((channels, spec.sample_rate))
}

/// Loads a clip named by a manifest line; relative paths resolve against `base`.
pub fn load_manifest_clip(record: &ManifestRecord, base: &Path) -> Result<MultichannelClip> {
    let rel = record
        .path
        .as_ref()
        .ok_or_else(|| Error::Data(format!("manifest record {} has no audio path", record.index)))?;
    let (channels, sample_rate) = read_channels(&base.join(rel))?;
    let clip = MultichannelClip {
        channels,
        sample_rate,
        label: record.to_label()?,
        meta: ClipMeta {
            snr_db: record.snr_db,
            noise_type: record.noise_type.clone(),
            keyword_azimuth_deg: record.keyword_azimuth_deg,
            noise_azimuth_deg: record.noise_azimuth_deg,
            warnings: Vec::new(),
            seed: record.seed,
        },
    };
    clip.validate()?;
    Ok(clip)
}
