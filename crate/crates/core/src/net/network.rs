//! Complete detector: feature normalizer, optional keys network and SVDF body.

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::net::attention::fuse_into;
use crate::net::layers::{Scalar, Stack, StackState};
use crate::{Error, Result};

/// Per-dimension affine feature normalization `(x - mean) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Estimates mean and inverse standard deviation from frames.
    pub fn fit<'a, I>(dim: usize, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut n = 0usize;
        for f in frames {
            if f.len() != dim {
                return Err(Error::Shape(format!("frame of {} values, expected {dim}", f.len())));
            }
            for (j, &v) in f.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += v as f64 * v as f64;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("no frames to fit the feature normalizer".into()));
        }
        let mut out = Self::identity(dim);
        for j in 0..dim {
            let mean = sum[j] / n as f64;
            let var = (sq[j] / n as f64 - mean * mean).max(0.0);
            out.mean[j] = mean as f32;
            out.scale[j] = (1.0 / var.sqrt().max(1e-3)) as f32;
        }
        Ok(out)
    }

    #[inline]
    pub fn apply<T: Scalar>(&self, x: &[f32], out: &mut [T]) {
        for ((o, &v), (&m, &s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.scale)) {
            *o = T::from_f64(((v - m) * s) as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwsNetwork<T> {
    /// Channel (`omni`, `anc`, `bf60`, ...) or channel mode (`omni+anc`) the
    /// network was trained for.
    pub channel_tag: String,
    pub normalizer: Normalizer,
    pub keys: Option<Stack<T>>,
    pub body: Stack<T>,
}

/// Streaming state for a [`KwsNetwork`] over a fixed number of channels.
#[derive(Debug, Clone)]
pub struct NetworkState<T> {
    keys: Vec<StackState<T>>,
    body: StackState<T>,
    z: Vec<Vec<T>>,
    alpha: Vec<T>,
    z_star: Vec<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn channels(&self) -> usize {
        self.z.len()
    }

    /// Fusion weights of the most recent frame, `channels × dim`.
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// Fused, normalized features of the most recent frame.
    pub fn fused(&self) -> &[T] {
        &self.z_star
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<T: Scalar> KwsNetwork<T> {
    pub fn new(channel_tag: impl Into<String>, normalizer: Normalizer, keys: Option<Stack<T>>, body: Stack<T>) -> Result<Self> {
        let dim = normalizer.dim();
        if normalizer.scale.len() != dim {
            return Err(Error::Shape("normalizer mean and scale differ in length".into()));
        }
        if body.input_dim() != dim {
            return Err(Error::Shape(format!("body expects {} features, normalizer has {dim}", body.input_dim())));
        }
        if body.output_dim() != 1 {
            return Err(Error::Shape(format!("body must end in one output, has {}", body.output_dim())));
        }
        if let Some(k) = &keys {
            if k.input_dim() != dim || k.output_dim() != dim {
                return Err(Error::Shape(format!(
                    "keys network maps {} -> {}, features have {dim}",
                    k.input_dim(),
                    k.output_dim()
                )));
            }
        }
        Ok(Self {
            channel_tag: channel_tag.into(),
            normalizer,
            keys,
            body,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn is_attention(&self) -> bool {
        self.keys.is_some()
    }

    /// Trainable parameters (the normalizer is fixed and excluded).
    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.keys.as_ref().map_or(0, Stack::param_count)
    }

    pub fn cast<U: Scalar>(&self) -> KwsNetwork<U> {
        KwsNetwork {
            channel_tag: self.channel_tag.clone(),
            normalizer: self.normalizer.clone(),
            keys: self.keys.as_ref().map(Stack::cast),
            body: self.body.cast(),
        }
    }

    /// Parameter tensors, keys network first.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.keys.as_ref().map_or_else(Vec::new, Stack::tensors);
        out.extend(self.body.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = self.keys.as_mut().map_or_else(Vec::new, Stack::tensors_mut);
        out.extend(self.body.tensors_mut());
        out
    }

    pub fn new_state(&self, channels: usize) -> Result<NetworkState<T>> {
        if channels == 0 {
            return Err(Error::Shape("at least one channel required".into()));
        }
        if channels > 1 && self.keys.is_none() {
            return Err(Error::Shape(format!(
                "network '{}' has no keys network and cannot fuse {channels} channels",
                self.channel_tag
            )));
        }
        let dim = self.feature_dim();
        let keys = match (&self.keys, channels) {
            (Some(k), c) if c > 1 => (0..c).map(|_| k.new_state()).collect(),
            _ => Vec::new(),
        };
        Ok(NetworkState {
            keys,
            body: self.body.new_state(),
            z: vec![vec![T::ZERO; dim]; channels],
            alpha: vec![T::ONE; channels * dim],
            z_star: vec![T::ZERO; dim],
        })
    }

    /// Consumes one frame per channel and returns the keyword posterior.
    pub fn step(&self, state: &mut NetworkState<T>, frames: &[&[f32]]) -> Result<f32> {
        let c = state.channels();
        if frames.len() != c {
            return Err(Error::Shape(format!("{} frames for {c} channels", frames.len())));
        }
        let dim = self.feature_dim();
        for (z, f) in state.z.iter_mut().zip(frames) {
            if f.len() != dim {
                return Err(Error::Shape(format!("frame of {} values, expected {dim}", f.len())));
            }
            self.normalizer.apply(f, z);
        }
        if c == 1 {
            state.z_star.copy_from_slice(&state.z[0]);
        } else {
            let keys = self.keys.as_ref().expect("checked in new_state");
            for (ks, z) in state.keys.iter_mut().zip(&state.z) {
                keys.step(ks, z)?;
            }
            let logits: Vec<&[T]> = state.keys.iter().map(StackState::output).collect();
            let zs: Vec<&[T]> = state.z.iter().map(Vec::as_slice).collect();
            fuse_into(&logits, &zs, &mut state.alpha, &mut state.z_star);
        }
        self.body.step(&mut state.body, &state.z_star)?;
        Ok(sigmoid(state.body.output()[0].to_f64()) as f32)
    }

    /// Posterior sequence for aligned channel features.
    pub fn posteriors(&self, channels: &[FeatureMatrix]) -> Result<Vec<f32>> {
        let frames = check_aligned(channels)?;
        let mut state = self.new_state(channels.len())?;
        let mut out = Vec::with_capacity(frames);
        let mut rows: Vec<&[f32]> = Vec::with_capacity(channels.len());
        for t in 0..frames {
            rows.clear();
            rows.extend(channels.iter().map(|c| c.frame(t)));
            out.push(self.step(&mut state, &rows)?);
        }
        Ok(out)
    }
}

pub(crate) fn check_aligned(channels: &[FeatureMatrix]) -> Result<usize> {
    let first = channels.first().ok_or_else(|| Error::Shape("no channels".into()))?;
    if channels.iter().any(|c| c.frames != first.frames || c.dim != first.dim) {
        return Err(Error::Shape("channel feature matrices are not aligned".into()));
    }
    Ok(first.frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::presets::{self, Scale};
    use rand::SeedableRng;

    fn net(attention: bool) -> KwsNetwork<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut body = Stack::<f64>::zeros(&presets::grad_check_body()).unwrap();
        body.init_random(&mut rng);
        let keys = attention.then(|| {
            let mut k = Stack::<f64>::zeros(&presets::keys_specs(Scale::Desk)).unwrap();
            k.init_random(&mut rng);
            k
        });
        KwsNetwork::new("t", Normalizer::identity(40), keys, body).unwrap().cast()
    }

    fn features(frames: usize, seed: u64) -> FeatureMatrix {
        let mut fm = FeatureMatrix::new(frames, 40, "t");
        for (i, v) in fm.data.iter_mut().enumerate() {
            *v = ((i as u64 * 2654435761 + seed) % 1000) as f32 / 250.0 - 2.0;
        }
        fm
    }

    #[test]
    fn single_channel_without_keys_only() {
        let n = net(false);
        assert!(n.new_state(2).is_err());
        let p = n.posteriors(&[features(12, 1)]).unwrap();
        assert_eq!(p.len(), 12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn identical_channels_match_single_channel() {
        let n = net(true);
        let f = features(15, 9);
        let one = n.posteriors(std::slice::from_ref(&f)).unwrap();
        let three = n.posteriors(&[f.clone(), f.clone(), f]).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn misaligned_channels_rejected() {
        let n = net(true);
        assert!(matches!(n.posteriors(&[features(5, 1), features(6, 1)]), Err(Error::Shape(_))));
    }
}
