//! Threshold calibration to a false-alarm budget on a confidence cache.
//!
//! An utterance fires on a channel when its cached confidence is strictly
//! above that channel's threshold; an OR-ensemble fires when any channel
//! does. False alarms are counted per negative utterance.

use serde::{Deserialize, Serialize};

use crate::eval::cache::ConfidenceTable;
use crate::{Error, Result};

pub const CALIBRATION_STEP: f64 = 0.001;

/// Number of grid intervals for a step that divides one.
pub(crate) fn grid_denominator(step: f64) -> Result<usize> {
    let d = (1.0 / step).round();
    if !(step > 0.0 && step < 1.0) || ((1.0 / step) - d).abs() > 1e-6 || d < 2.0 {
        return Err(Error::Config(format!("grid step {step} must divide 1 into at least two parts")));
    }
    Ok(d as usize)
}

/// Grid value `k · step`, formed as `k / denominator`.
pub(crate) fn grid_value(k: usize, denom: usize) -> f64 {
    k as f64 / denom as f64
}

/// Outcome of applying a threshold vector to a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Operating {
    pub misses: usize,
    pub positives: usize,
    pub false_alarms: usize,
    pub negative_hours: f64,
    pub frr: f64,
    pub fa_per_hour: f64,
}

pub(crate) fn check_table(table: &ConfidenceTable) -> Result<()> {
    if table.positives() == 0 {
        return Err(Error::Data("confidence cache has no positives".into()));
    }
    if !(table.negative_hours() > 0.0) {
        return Err(Error::Data("confidence cache has no negative audio".into()));
    }
    Ok(())
}

/// FRR and FA/h of the OR-ensemble with the given per-channel thresholds.
pub fn evaluate_thresholds(table: &ConfidenceTable, thresholds: &[f64]) -> Result<Operating> {
    check_table(table)?;
    if thresholds.len() != table.channels.len() {
        return Err(Error::Shape(format!(
            "{} thresholds for {} channels",
            thresholds.len(),
            table.channels.len()
        )));
    }
    let (mut misses, mut fas) = (0, 0);
    for u in &table.utterances {
        let fires = u.confidences.iter().zip(thresholds).any(|(&c, &t)| c as f64 > t);
        match (u.positive, fires) {
            (true, false) => misses += 1,
            (false, true) => fas += 1,
            _ => {}
        }
    }
    let positives = table.positives();
    let hours = table.negative_hours();
    Ok(Operating {
        misses,
        positives,
        false_alarms: fas,
        negative_hours: hours,
        frr: misses as f64 / positives as f64,
        fa_per_hour: fas as f64 / hours,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub frr: f64,
    pub fa_per_hour: f64,
    /// False when even the largest grid threshold exceeds the budget.
    pub reachable: bool,
}

/// Smallest threshold on the 0.001 grid (0.001 … 0.999) meeting `target_fah`.
pub fn calibrate_threshold(table: &ConfidenceTable, target_fah: f64) -> Result<Calibration> {
    check_table(table)?;
    if table.channels.len() != 1 {
        return Err(Error::Shape(format!(
            "calibration takes one channel, table has {}",
            table.channels.len()
        )));
    }
    if !(target_fah >= 0.0) {
        return Err(Error::Config(format!("target FA/h {target_fah} must be non-negative")));
    }
    let denom = grid_denominator(CALIBRATION_STEP)?;
    let hours = table.negative_hours();
    let mut negatives: Vec<f64> = table
        .utterances
        .iter()
        .filter(|u| !u.positive)
        .map(|u| u.confidences[0] as f64)
        .collect();
    negatives.sort_by(|a, b| a.total_cmp(b));
    for k in 1..denom {
        let theta = grid_value(k, denom);
        let above = negatives.len() - negatives.partition_point(|&c| c <= theta);
        if above as f64 / hours <= target_fah {
            let op = evaluate_thresholds(table, &[theta])?;
            return Ok(Calibration {
                threshold: theta,
                frr: op.frr,
                fa_per_hour: op.fa_per_hour,
                reachable: true,
            });
        }
    }
    let theta = grid_value(denom - 1, denom);
    let op = evaluate_thresholds(table, &[theta])?;
    Ok(Calibration {
        threshold: theta,
        frr: op.frr,
        fa_per_hour: op.fa_per_hour,
        reachable: false,
    })
}
