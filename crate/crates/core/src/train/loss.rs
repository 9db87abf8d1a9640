//! Frame cross-entropy and the utterance-level max-pool loss.
//!
//! The max-pool loss scores an utterance by `p̂ = Π_parts max_t x_tp` and
//! applies binary cross-entropy to `p̂`. Probabilities are clamped to
//! `[1e-7, 1 - 1e-7]`; the product is formed as a sum of logs.

use crate::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean binary cross-entropy over frames.
pub fn frame_ce_loss(posteriors: &[f64], targets: &[u8]) -> Result<f64> {
    if posteriors.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} posteriors for {} targets",
            posteriors.len(),
            targets.len()
        )));
    }
    if posteriors.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = posteriors
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let c = clamp(p);
            if y != 0 {
                -c.ln()
            } else {
                -(1.0 - c).ln()
            }
        })
        .sum();
    Ok(sum / posteriors.len() as f64)
}

/// Derivative of [`frame_ce_loss`] with respect to each frame's logit.
pub fn frame_ce_logit_grad(posteriors: &[f64], targets: &[u8], out: &mut [f64]) {
    let inv_t = 1.0 / posteriors.len().max(1) as f64;
    for ((o, &p), &y) in out.iter_mut().zip(posteriors).zip(targets) {
        let clamped = p <= PROB_FLOOR || p >= 1.0 - PROB_FLOOR;
        *o = if clamped { 0.0 } else { (p - if y != 0 { 1.0 } else { 0.0 }) * inv_t };
    }
}

/// Per-part maxima (first argmax on ties) of a row-major `T × parts` matrix.
fn part_maxima(posteriors: &[f64], parts: usize) -> Vec<(usize, f64)> {
    (0..parts)
        .map(|k| {
            let mut best = (0, posteriors[k]);
            for (t, row) in posteriors.chunks_exact(parts).enumerate().skip(1) {
                if row[k] > best.1 {
                    best = (t, row[k]);
                }
            }
            best
        })
        .collect()
}

fn log_phat(maxima: &[(usize, f64)]) -> f64 {
    maxima.iter().map(|&(_, m)| m.max(PROB_FLOOR).ln()).sum()
}

/// Max-pool loss over a row-major `T × parts` posterior matrix.
pub fn maxpool_loss(posteriors: &[f64], parts: usize, positive: bool) -> Result<f64> {
    if parts == 0 || posteriors.is_empty() || !posteriors.len().is_multiple_of(parts) {
        return Err(Error::Shape(format!(
            "max-pool loss needs T >= 1 frames of {parts} parts, got {} values",
            posteriors.len()
        )));
    }
    let lp = log_phat(&part_maxima(posteriors, parts));
    Ok(if positive {
        -lp.clamp(PROB_FLOOR.ln(), (1.0 - PROB_FLOOR).ln())
    } else {
        -(1.0 - clamp(lp.exp())).ln()
    })
}

/// Gradient of [`maxpool_loss`] with respect to the posteriors; only the
/// first argmax frame of each part receives a non-zero entry.
pub fn maxpool_posterior_grad(posteriors: &[f64], parts: usize, positive: bool, out: &mut [f64]) -> Result<()> {
    maxpool_loss(posteriors, parts, positive)?;
    out.iter_mut().for_each(|g| *g = 0.0);
    let maxima = part_maxima(posteriors, parts);
    let lp = log_phat(&maxima);
    let phat = lp.exp();
    for (k, &(t, m)) in maxima.iter().enumerate() {
        if m <= PROB_FLOOR {
            continue;
        }
        out[t * parts + k] = if positive {
            if lp <= PROB_FLOOR.ln() || lp >= (1.0 - PROB_FLOOR).ln() {
                0.0
            } else {
                -1.0 / m
            }
        } else if phat >= 1.0 - PROB_FLOOR || phat <= PROB_FLOOR {
            0.0
        } else {
            phat / ((1.0 - phat) * m)
        };
    }
    Ok(())
}
