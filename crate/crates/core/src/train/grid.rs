//! Exhaustive per-channel threshold search for an OR-ensemble.
//!
//! Each utterance is reduced to its grid level per channel (the number of grid
//! thresholds its confidence exceeds). Counting utterances that do not fire at
//! a threshold vector is then a prefix sum over a `C`-dimensional histogram of
//! levels, so every grid point is scored in constant time.

use serde::{Deserialize, Serialize};

use crate::eval::cache::ConfidenceTable;
use crate::eval::calibrate::{check_table, grid_denominator, grid_value};
use crate::{Error, Result};

/// Largest histogram the search will allocate.
const MAX_CELLS: usize = 1 << 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub thresholds: Vec<f64>,
    pub grid_step: f64,
    /// Set when no grid point meets the false-alarm budget; the thresholds
    /// are then all at the top of the grid.
    pub constraint_violated: bool,
    pub frr: f64,
    pub fa_per_hour: f64,
}

fn level(conf: f32, denom: usize) -> usize {
    let c = conf as f64;
    // largest k in 1..denom with c > k/denom
    let mut lo = 0;
    let mut hi = denom - 1;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if c > grid_value(mid, denom) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

pub fn grid_search_thresholds(table: &ConfidenceTable, target_fah: f64, grid_step: f64) -> Result<ThresholdVector> {
    check_table(table)?;
    let c = table.channels.len();
    if c == 0 {
        return Err(Error::Shape("no channels to search".into()));
    }
    let denom = grid_denominator(grid_step)?;
    let k_max = denom - 1;
    let side = k_max + 1;
    let cells = (0..c).try_fold(1usize, |acc, _| acc.checked_mul(side).filter(|&n| n <= MAX_CELLS));
    let cells = cells.ok_or_else(|| {
        Error::Config(format!("grid step {grid_step} with {c} channels is too fine for exhaustive search"))
    })?;
    let mut pos = vec![0u32; cells];
    let mut neg = vec![0u32; cells];
    for u in &table.utterances {
        let mut idx = 0;
        let mut stride = 1;
        for &conf in &u.confidences {
            idx += level(conf, denom) * stride;
            stride *= side;
        }
        if u.positive {
            pos[idx] += 1;
        } else {
            neg[idx] += 1;
        }
    }
    // inclusive prefix sums along every axis: cell a counts utterances with level <= a
    let mut stride = 1;
    for _ in 0..c {
        for i in 0..cells {
            if (i / stride) % side > 0 {
                pos[i] += pos[i - stride];
                neg[i] += neg[i - stride];
            }
        }
        stride *= side;
    }
    let positives = table.positives();
    let negatives = table.utterances.len() - positives;
    let hours = table.negative_hours();

    // grid point k (each k_i in 1..=k_max) is silent for levels < k, i.e. cell k - 1
    let mut best: Option<(usize, Vec<usize>, usize)> = None;
    let mut k = vec![1usize; c];
    loop {
        let cell = k.iter().rev().fold(0, |acc, &ki| acc * side + (ki - 1));
        let fas = negatives - neg[cell] as usize;
        if fas as f64 / hours <= target_fah {
            let misses = pos[cell] as usize;
            let better = match &best {
                None => true,
                Some((m, bk, _)) => misses < *m || (misses == *m && k > *bk),
            };
            if better {
                best = Some((misses, k.clone(), fas));
            }
        }
        // odometer over channels, last channel fastest
        let mut i = c;
        let done = loop {
            if i == 0 {
                break true;
            }
            i -= 1;
            if k[i] < k_max {
                k[i] += 1;
                break false;
            }
            k[i] = 1;
        };
        if done {
            break;
        }
    }
    let (thresholds, violated, misses, fas) = match best {
        Some((m, k, fas)) => (k.iter().map(|&ki| grid_value(ki, denom)).collect::<Vec<_>>(), false, m, fas),
        None => {
            let top = vec![k_max; c];
            let cell = top.iter().rev().fold(0, |acc, &ki| acc * side + (ki - 1));
            (
                vec![grid_value(k_max, denom); c],
                true,
                pos[cell] as usize,
                negatives - neg[cell] as usize,
            )
        }
    };
    Ok(ThresholdVector {
        thresholds,
        grid_step,
        constraint_violated: violated,
        frr: misses as f64 / positives as f64,
        fa_per_hour: fas as f64 / hours,
    })
}
