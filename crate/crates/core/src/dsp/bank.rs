//! Candidate channels for each approach and their features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::anc::{anc_process, AncConfig};
use super::beam::BeamSet;
use super::mel::{FeatureMatrix, LogMel, MelConfig};
use crate::array::{ArrayGeometry, MultichannelClip};
use crate::{Error, Result};

/// A mono channel derived from the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    Omni,
    Anc,
    /// Fixed beam by index into [`BeamSet::AZIMUTHS`].
    Beam(usize),
}

impl ChannelKind {
    pub fn tag(self) -> String {
        match self {
            ChannelKind::Omni => "omni".into(),
            ChannelKind::Anc => "anc".into(),
            ChannelKind::Beam(b) => format!("bf{}", BeamSet::AZIMUTHS[b] as u32),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "omni" => Ok(ChannelKind::Omni),
            "anc" => Ok(ChannelKind::Anc),
            t => BeamSet::AZIMUTHS
                .iter()
                .position(|&az| t.strip_prefix("bf") == Some(&(az as u32).to_string()))
                .map(ChannelKind::Beam)
                .ok_or_else(|| Error::Config(format!("unknown channel tag `{t}`"))),
        }
    }

    pub fn all_beams() -> Vec<ChannelKind> {
        (0..BeamSet::AZIMUTHS.len()).map(ChannelKind::Beam).collect()
    }
}

/// Channel bank feeding a detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    #[serde(rename = "omni")]
    Omni,
    #[serde(rename = "omni+anc")]
    OmniAnc,
    #[serde(rename = "omni+bf6")]
    OmniBf6,
}

impl ChannelMode {
    pub fn channels(self) -> Vec<ChannelKind> {
        match self {
            ChannelMode::Omni => vec![ChannelKind::Omni],
            ChannelMode::OmniAnc => vec![ChannelKind::Omni, ChannelKind::Anc],
            ChannelMode::OmniBf6 => {
                let mut v = vec![ChannelKind::Omni];
                v.extend(ChannelKind::all_beams());
                v
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelMode::Omni => "omni",
            ChannelMode::OmniAnc => "omni+anc",
            ChannelMode::OmniBf6 => "omni+bf6",
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omni" => Ok(ChannelMode::Omni),
            "omni+anc" => Ok(ChannelMode::OmniAnc),
            "omni+bf6" => Ok(ChannelMode::OmniBf6),
            other => Err(Error::Config(format!("unknown channel mode `{other}`"))),
        }
    }
}

/// Everything needed to go from a clip to features.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub geometry: ArrayGeometry,
    pub beams: BeamSet,
    pub anc: AncConfig,
    pub mel: LogMel,
}

impl FrontEnd {
    pub fn new(geometry: ArrayGeometry, anc: AncConfig, mel: MelConfig) -> Result<Self> {
        let beams = BeamSet::six(&geometry)?;
        Ok(Self {
            geometry,
            beams,
            anc,
            mel: LogMel::new(mel),
        })
    }

    /// Mono signals for the requested channels, all of the clip's length.
    pub fn signals(&self, clip: &MultichannelClip, kinds: &[ChannelKind]) -> Result<Vec<Vec<f64>>> {
        let beams = if kinds.iter().any(|k| matches!(k, ChannelKind::Beam(_))) {
            Some(super::beam::beamform(clip, &self.beams)?)
        } else {
            None
        };
        let anc = if kinds.contains(&ChannelKind::Anc) {
            Some(anc_process(clip, &self.anc)?.samples)
        } else {
            None
        };
        Ok(kinds
            .iter()
            .map(|k| match k {
                ChannelKind::Omni => clip.channel_f64(0),
                ChannelKind::Anc => anc.clone().unwrap_or_default(),
                ChannelKind::Beam(b) => beams.as_ref().map(|v| v[*b].clone()).unwrap_or_default(),
            })
            .collect())
    }

    pub fn features(&self, clip: &MultichannelClip, kinds: &[ChannelKind]) -> Result<Vec<FeatureMatrix>> {
        let signals = self.signals(clip, kinds)?;
        let n = signals.iter().map(Vec::len).max().unwrap_or(0);
        Ok(signals
            .into_iter()
            .zip(kinds)
            .map(|(mut s, k)| {
                s.resize(n, 0.0);
                self.mel.compute(&s, &k.tag())
            })
            .collect())
    }
}

impl Default for FrontEnd {
    fn default() -> Self {
        Self::new(ArrayGeometry::default(), AncConfig::default(), MelConfig::default())
            .expect("default geometry is valid")
    }
}

/// Ordered feature matrices for an approach: `[omni]`, `[omni, anc]` or
/// `[omni, bf0, …, bf300]`, all with the same frame count.
pub fn make_channel_bank(clip: &MultichannelClip, mode: ChannelMode, frontend: &FrontEnd) -> Result<Vec<FeatureMatrix>> {
    frontend.features(clip, &mode.channels())
}
