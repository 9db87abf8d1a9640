//! FRR-vs-SNR curves and SNR gain by inverse interpolation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCurve {
    pub channel: String,
    /// `(snr_db, frr)` sorted by SNR.
    pub points: Vec<(f64, f64)>,
}

impl SnrCurve {
    pub fn new(channel: impl Into<String>, mut points: Vec<(f64, f64)>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() < 2 {
            return Err(Error::Data("an SNR curve needs at least two points".into()));
        }
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data("SNR values of a curve must be distinct".into()));
        }
        Ok(Self {
            channel: channel.into(),
            points,
        })
    }
}

/// Per-bucket FRR from `(snr_db, detected)` outcomes of positive records.
/// Returns the curve plus a warning for every empty bucket.
pub fn build_snr_curve(channel: &str, grid: &[f64], outcomes: &[(f64, bool)]) -> Result<(SnrCurve, Vec<String>)> {
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for &g in grid {
        let bucket: Vec<bool> = outcomes
            .iter()
            .filter(|(s, _)| (s - g).abs() < 1e-6)
            .map(|&(_, d)| d)
            .collect();
        if bucket.is_empty() {
            warnings.push(format!("{channel}: no records at {g} dB SNR"));
            continue;
        }
        let missed = bucket.iter().filter(|d| !**d).count();
        points.push((g, missed as f64 / bucket.len() as f64));
    }
    Ok((SnrCurve::new(channel, points)?, warnings))
}

/// Pool-adjacent-violators fit of a nonincreasing sequence (equal weights).
pub fn isotonic_nonincreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// SNR at which the cleaned curve reaches `level`. A plateau at exactly
/// `level` resolves to its midpoint.
fn inverse_snr(curve: &SnrCurve, level: f64) -> Result<f64> {
    let snr: Vec<f64> = curve.points.iter().map(|p| p.0).collect();
    let frr = isotonic_nonincreasing(&curve.points.iter().map(|p| p.1).collect::<Vec<_>>());
    let (lo, hi) = (frr[frr.len() - 1], frr[0]);
    if !(level >= lo && level <= hi) {
        return Err(Error::Data(format!(
            "FRR level {level} outside the range [{lo}, {hi}] of curve '{}'",
            curve.channel
        )));
    }
    let at: Vec<usize> = (0..frr.len()).filter(|&i| frr[i] == level).collect();
    if let (Some(&a), Some(&b)) = (at.first(), at.last()) {
        return Ok(0.5 * (snr[a] + snr[b]));
    }
    for i in 0..frr.len() - 1 {
        let (f0, f1) = (frr[i], frr[i + 1]);
        if f0 > level && level > f1 {
            return Ok(snr[i] + (f0 - level) / (f0 - f1) * (snr[i + 1] - snr[i]));
        }
    }
    unreachable!("level inside the curve range must be bracketed")
}

/// SNR gain of `candidate` over `reference` at a given FRR level, in dB.
pub fn snr_gain(reference: &SnrCurve, candidate: &SnrCurve, frr_level: f64) -> Result<f64> {
    Ok(inverse_snr(reference, frr_level)? - inverse_snr(candidate, frr_level)?)
}

pub fn write_curves_csv(w: &mut impl Write, curves: &[SnrCurve]) -> Result<()> {
    writeln!(w, "channel,snr_db,frr")?;
    for c in curves {
        for (s, f) in &c.points {
            writeln!(w, "{},{},{}", c.channel, s, f)?;
        }
    }
    Ok(())
}
