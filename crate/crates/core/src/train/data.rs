//! Training examples: aligned channel features with frame and utterance targets.

use crate::array::Label;
use crate::dsp::{FeatureMatrix, MelConfig};
use crate::net::network::check_aligned;
use crate::{Error, Result};

/// Per-frame targets: a frame is positive when its centre lies in the keyword span.
pub fn frame_targets(label: Label, frames: usize, mel: &MelConfig) -> Vec<u8> {
    let Some((start, end)) = label.span() else {
        return vec![0; frames];
    };
    (0..frames)
        .map(|t| {
            let centre = t * mel.hop + mel.frame_len / 2;
            u8::from(centre >= start && centre < end)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// One feature matrix per channel, all with the same frame count.
    pub channels: Vec<FeatureMatrix>,
    pub frame_targets: Vec<u8>,
    pub positive: bool,
}

impl Utterance {
    pub fn new(id: impl Into<String>, channels: Vec<FeatureMatrix>, label: Label, mel: &MelConfig) -> Result<Self> {
        let frames = check_aligned(&channels)?;
        Ok(Self {
            id: id.into(),
            frame_targets: frame_targets(label, frames, mel),
            positive: label.is_positive(),
            channels,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_targets.len()
    }

    /// Keeps frames `start..` only.
    pub fn crop_from(mut self, start: usize) -> Self {
        let end = self.frames();
        let start = start.min(end);
        self.channels = self.channels.iter().map(|c| c.slice_frames(start, end)).collect();
        self.frame_targets.drain(..start);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let frames = check_aligned(&self.channels)?;
        if frames != self.frame_targets.len() {
            return Err(Error::Shape(format!(
                "utterance {}: {} frames but {} targets",
                self.id,
                frames,
                self.frame_targets.len()
            )));
        }
        if frames == 0 {
            return Err(Error::Data(format!("utterance {} has no frames", self.id)));
        }
        if !self.positive && self.frame_targets.iter().any(|&y| y != 0) {
            return Err(Error::Data(format!("negative utterance {} has positive frames", self.id)));
        }
        Ok(())
    }
}

/// A labelled training set over a fixed channel list.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceBatch {
    pub channel_tags: Vec<String>,
    pub utterances: Vec<Utterance>,
}

impl UtteranceBatch {
    pub fn new(channel_tags: Vec<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let out = Self {
            channel_tags,
            utterances,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for u in &self.utterances {
            u.validate()?;
            if u.channels.len() != self.channel_tags.len() {
                return Err(Error::Shape(format!(
                    "utterance {} has {} channels, batch declares {}",
                    u.id,
                    u.channels.len(),
                    self.channel_tags.len()
                )));
            }
        }
        Ok(())
    }

    /// Requires both classes to be present.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let pos = self.utterances.iter().filter(|u| u.positive).count();
        if pos == 0 || pos == self.len() {
            return Err(Error::Data("training set needs positive and negative utterances".into()));
        }
        Ok(())
    }

    /// Fraction of positive frames over the whole set.
    pub fn positive_frame_rate(&self) -> f64 {
        let (mut pos, mut total) = (0usize, 0usize);
        for u in &self.utterances {
            pos += u.frame_targets.iter().filter(|&&y| y != 0).count();
            total += u.frames();
        }
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }

    /// Frames of channel `c` across all utterances.
    pub fn channel_frames(&self, c: usize) -> impl Iterator<Item = &[f32]> {
        self.utterances
            .iter()
            .flat_map(move |u| (0..u.frames()).map(move |t| u.channels[c].frame(t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_follow_frame_centres() {
        let mel = MelConfig::default();
        // centre of frame t is 160 t + 200
        let y = frame_targets(Label::Keyword { start: 520, end: 840 }, 6, &mel);
        assert_eq!(y, vec![0, 0, 1, 1, 0, 0]);
        assert_eq!(frame_targets(Label::Negative, 3, &mel), vec![0, 0, 0]);
    }

    #[test]
    fn crop_and_validate() {
        let mel = MelConfig::default();
        let fm = FeatureMatrix::new(6, 2, "omni");
        let u = Utterance::new("a", vec![fm], Label::Keyword { start: 520, end: 840 }, &mel).unwrap();
        let c = u.crop_from(2);
        assert_eq!(c.frames(), 4);
        assert_eq!(c.frame_targets, vec![1, 1, 0, 0]);
        c.validate().unwrap();
        let empty = UtteranceBatch::new(vec!["omni".into()], vec![]).unwrap();
        assert!(empty.require_both_classes().is_err());
    }
}
