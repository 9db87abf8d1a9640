//! False-reject rate and false alarms per hour from detection events.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance around the labelled keyword span for a detection to count.
pub const MATCH_WINDOW_S: f64 = 0.5;

/// Ground truth of one evaluation clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipTruth {
    /// Keyword span in seconds; `None` for negative audio.
    pub span_s: Option<(f64, f64)>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCorpus {
    pub clips: Vec<ClipTruth>,
}

impl EvalCorpus {
    pub fn positives(&self) -> usize {
        self.clips.iter().filter(|c| c.span_s.is_some()).count()
    }

    pub fn negative_hours(&self) -> f64 {
        self.clips
            .iter()
            .filter(|c| c.span_s.is_none())
            .map(|c| c.duration_s)
            .sum::<f64>()
            / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub positives: usize,
    pub detected: usize,
    pub false_alarms: usize,
    pub negative_hours: f64,
    pub frr: f64,
    pub fa_per_hour: f64,
}

/// Scores event times (seconds, per clip) against the corpus.
///
/// A positive is detected when any of its events lies within
/// `[start - window, end + window]`; events elsewhere on positive clips are
/// ignored. Every event on a negative clip is a false alarm.
pub fn score_corpus(corpus: &EvalCorpus, events_s: &[Vec<f64>], window_s: f64) -> Result<Score> {
    if events_s.len() != corpus.clips.len() {
        return Err(Error::Shape(format!(
            "{} event lists for {} clips",
            events_s.len(),
            corpus.clips.len()
        )));
    }
    let positives = corpus.positives();
    if positives == 0 {
        return Err(Error::Data("corpus has no positives; FRR is undefined".into()));
    }
    let negative_hours = corpus.negative_hours();
    if !(negative_hours > 0.0) {
        return Err(Error::Data("corpus has no negative audio; FA/h is undefined".into()));
    }
    let mut detected = 0;
    let mut false_alarms = 0;
    for (clip, events) in corpus.clips.iter().zip(events_s) {
        match clip.span_s {
            Some((s, e)) => {
                if events.iter().any(|&t| t >= s - window_s && t <= e + window_s) {
                    detected += 1;
                }
            }
            None => false_alarms += events.len(),
        }
    }
    Ok(Score {
        positives,
        detected,
        false_alarms,
        negative_hours,
        frr: (positives - detected) as f64 / positives as f64,
        fa_per_hour: false_alarms as f64 / negative_hours,
    })
}
