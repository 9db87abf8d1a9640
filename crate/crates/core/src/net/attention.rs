//! Per-feature softmax fusion of channel features.
//!
//! For feature `j`, the weights `α_ij = softmax_i(e_ij)` over channels and the
//! fused value is `z*_j = Σ_i α_ij z_ij`. The sum is evaluated as
//! `z_0j + Σ_i α_ij (z_ij - z_0j)`, which is algebraically identical and keeps
//! fusion of identical channels (or a single channel) exact in floating point.

use crate::net::layers::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame<T> {
    /// Row-major `channels × dim`; each column sums to one.
    pub alpha: Vec<T>,
    pub z_star: Vec<T>,
    pub channels: usize,
}

impl<T: Scalar> FusedFrame<T> {
    pub fn dim(&self) -> usize {
        self.z_star.len()
    }

    pub fn weight(&self, channel: usize, feature: usize) -> T {
        self.alpha[channel * self.dim() + feature]
    }
}

/// Fuses one frame. `logits[i]` and `frames[i]` belong to channel `i`.
pub fn fuse_frames<T: Scalar>(logits: &[&[T]], frames: &[&[T]]) -> Result<FusedFrame<T>> {
    let c = frames.len();
    if c == 0 || logits.len() != c {
        return Err(Error::Shape(format!("{} logit rows for {} channels", logits.len(), c)));
    }
    let d = frames[0].len();
    if frames.iter().chain(logits).any(|r| r.len() != d) {
        return Err(Error::Shape("channel rows differ in dimension".into()));
    }
    let mut alpha = vec![T::ZERO; c * d];
    let mut z_star = frames[0].to_vec();
    fuse_into(logits, frames, &mut alpha, &mut z_star);
    Ok(FusedFrame {
        alpha,
        z_star,
        channels: c,
    })
}

/// Allocation-free core of [`fuse_frames`]; shapes are assumed valid.
pub(crate) fn fuse_into<T: Scalar>(logits: &[&[T]], frames: &[&[T]], alpha: &mut [T], z_star: &mut [T]) {
    let c = frames.len();
    let d = z_star.len();
    for j in 0..d {
        let mut m = logits[0][j];
        for row in &logits[1..] {
            if row[j] > m {
                m = row[j];
            }
        }
        let mut total = T::ZERO;
        for i in 0..c {
            let w = (logits[i][j] - m).exp();
            alpha[i * d + j] = w;
            total += w;
        }
        let z0 = frames[0][j];
        let mut acc = T::ZERO;
        for i in 0..c {
            let a = alpha[i * d + j].div(total);
            alpha[i * d + j] = a;
            if i > 0 {
                acc += a * (frames[i][j] - z0);
            }
        }
        z_star[j] = z0 + acc;
    }
}
