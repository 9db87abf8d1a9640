//! Per-utterance confidence cache so thresholds can be searched without
//! re-running inference.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::manifest::{read_jsonl, write_jsonl};
use crate::{Error, Result};

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub utterance_id: String,
    pub channel_tag: String,
    pub max_confidence: f32,
    pub is_positive: bool,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedUtterance {
    pub id: String,
    pub positive: bool,
    pub duration_s: f64,
    /// One confidence per channel of the table.
    pub confidences: Vec<f32>,
}

/// Confidences of a set of utterances over a fixed channel list.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    pub channels: Vec<String>,
    pub utterances: Vec<CachedUtterance>,
}

impl ConfidenceTable {
    pub fn new(channels: Vec<String>) -> Self {
        Self {
            channels,
            utterances: Vec::new(),
        }
    }

    pub fn push(&mut self, utt: CachedUtterance) -> Result<()> {
        if utt.confidences.len() != self.channels.len() {
            return Err(Error::Shape(format!(
                "utterance {} has {} confidences for {} channels",
                utt.id,
                utt.confidences.len(),
                self.channels.len()
            )));
        }
        self.utterances.push(utt);
        Ok(())
    }

    pub fn positives(&self) -> usize {
        self.utterances.iter().filter(|u| u.positive).count()
    }

    pub fn negative_hours(&self) -> f64 {
        self.utterances
            .iter()
            .filter(|u| !u.positive)
            .map(|u| u.duration_s)
            .sum::<f64>()
            / 3600.0
    }

    /// Single-channel view of channel `c`.
    pub fn channel(&self, c: usize) -> ConfidenceTable {
        ConfidenceTable {
            channels: vec![self.channels[c].clone()],
            utterances: self
                .utterances
                .iter()
                .map(|u| CachedUtterance {
                    confidences: vec![u.confidences[c]],
                    ..u.clone()
                })
                .collect(),
        }
    }

    /// Joins single-channel tables over the same utterances.
    pub fn zip(tables: &[ConfidenceTable]) -> Result<ConfidenceTable> {
        let first = tables.first().ok_or_else(|| Error::Data("no tables to join".into()))?;
        let mut out = ConfidenceTable::new(tables.iter().flat_map(|t| t.channels.clone()).collect());
        for (i, u) in first.utterances.iter().enumerate() {
            let mut conf = Vec::with_capacity(out.channels.len());
            for t in tables {
                let v = t
                    .utterances
                    .get(i)
                    .filter(|v| v.id == u.id)
                    .ok_or_else(|| Error::Data(format!("tables disagree at utterance {}", u.id)))?;
                conf.extend_from_slice(&v.confidences);
            }
            out.push(CachedUtterance {
                confidences: conf,
                ..u.clone()
            })?;
        }
        Ok(out)
    }

    pub fn to_records(&self) -> Vec<ConfidenceRecord> {
        let mut out = Vec::with_capacity(self.utterances.len() * self.channels.len());
        for u in &self.utterances {
            for (c, &v) in self.channels.iter().zip(&u.confidences) {
                out.push(ConfidenceRecord {
                    utterance_id: u.id.clone(),
                    channel_tag: c.clone(),
                    max_confidence: v,
                    is_positive: u.positive,
                    duration_s: u.duration_s,
                });
            }
        }
        out
    }

    /// Rebuilds a table; utterances keep first-appearance order and every
    /// utterance must carry every listed channel.
    pub fn from_records(channels: &[String], records: &[ConfidenceRecord]) -> Result<ConfidenceTable> {
        let mut order: Vec<&str> = Vec::new();
        let mut seen: BTreeMap<&str, (bool, f64, Vec<Option<f32>>)> = BTreeMap::new();
        for r in records {
            let Some(c) = channels.iter().position(|c| *c == r.channel_tag) else {
                continue;
            };
            let entry = seen.entry(&r.utterance_id).or_insert_with(|| {
                order.push(&r.utterance_id);
                (r.is_positive, r.duration_s, vec![None; channels.len()])
            });
            entry.2[c] = Some(r.max_confidence);
        }
        let mut out = ConfidenceTable::new(channels.to_vec());
        for id in order {
            let (positive, duration_s, conf) = &seen[id];
            let confidences = conf
                .iter()
                .zip(channels)
                .map(|(v, c)| v.ok_or_else(|| Error::Data(format!("utterance {id} lacks channel {c}"))))
                .collect::<Result<Vec<f32>>>()?;
            out.push(CachedUtterance {
                id: id.to_string(),
                positive: *positive,
                duration_s: *duration_s,
                confidences,
            })?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.to_records())
    }

    pub fn load(path: &Path, channels: &[String]) -> Result<Self> {
        let records: Vec<ConfidenceRecord> = read_jsonl(path)?;
        Self::from_records(channels, &records)
    }
}

/// Cached confidence of one posterior sequence.
///
/// Negatives use the global maximum. Positives use the maximum sliding-max
/// value over frames whose time falls inside the match window around the
/// keyword span, i.e. the largest confidence an event could carry there.
pub fn window_confidence(
    posteriors: &[f32],
    span_s: Option<(f64, f64)>,
    frame_s: f64,
    sliding_window: usize,
    match_window_s: f64,
) -> f32 {
    let Some((start, end)) = span_s else {
        return posteriors.iter().copied().fold(0.0, f32::max);
    };
    let lo_t = ((start - match_window_s) / frame_s).ceil().max(0.0) as usize;
    let hi_t = ((end + match_window_s) / frame_s).floor();
    if hi_t < 0.0 || posteriors.is_empty() {
        return 0.0;
    }
    let hi_t = (hi_t as usize).min(posteriors.len() - 1);
    if lo_t > hi_t {
        return 0.0;
    }
    let from = lo_t.saturating_sub(sliding_window.saturating_sub(1));
    posteriors[from..=hi_t].iter().copied().fold(0.0, f32::max)
}
