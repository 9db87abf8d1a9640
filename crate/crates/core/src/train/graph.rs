//! Cached double-precision forward pass and reverse-mode gradients.

use crate::dsp::FeatureMatrix;
use crate::net::attention::fuse_into;
use crate::net::layers::{dot, Activation, Layer, Stack};
use crate::net::network::{check_aligned, sigmoid, KwsNetwork};
use crate::{Error, Result};

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Activations of one layer over a whole sequence, row-major `T × width`.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// SVDF feature-filter outputs; empty for dense layers.
    pub s: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn forward_stack(stack: &Stack<f64>, x: &[f64], frames: usize) -> Vec<LayerCache> {
    forward_stack_from(stack, 0, x, frames)
}

/// Runs layers `first..`; `x` is the input of layer `first`.
pub fn forward_stack_from(stack: &Stack<f64>, first: usize, x: &[f64], frames: usize) -> Vec<LayerCache> {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(stack.layers.len() - first.min(stack.layers.len()));
    for layer in &stack.layers[first..] {
        let input = caches.last().map_or(x, |c| c.out.as_slice());
        let cache = match layer {
            Layer::Dense(d) => {
                let mut pre = vec![0.0; frames * d.outputs];
                for t in 0..frames {
                    let xt = &input[t * d.inputs..(t + 1) * d.inputs];
                    for (o, row) in d.weights.chunks_exact(d.inputs).enumerate() {
                        pre[t * d.outputs + o] = dot(row, xt) + d.bias[o];
                    }
                }
                let out = pre.iter().map(|&v| d.activation.apply(v)).collect();
                LayerCache { s: Vec::new(), pre, out }
            }
            Layer::Svdf(l) => {
                let (nn, m) = (l.nodes, l.memory);
                let mut s = vec![0.0; frames * nn];
                for t in 0..frames {
                    let xt = &input[t * l.inputs..(t + 1) * l.inputs];
                    for (n, row) in l.feature_filters.chunks_exact(l.inputs).enumerate() {
                        s[t * nn + n] = dot(row, xt);
                    }
                }
                let mut pre = vec![0.0; frames * nn];
                for t in 0..frames {
                    for n in 0..nn {
                        let v = &l.time_filters[n * m..(n + 1) * m];
                        let mut a = 0.0;
                        for k in 0..m.min(t + 1) {
                            a += v[k] * s[(t - k) * nn + n];
                        }
                        pre[t * nn + n] = a + l.bias[n];
                    }
                }
                let out = pre.iter().map(|&v| l.activation.apply(v)).collect();
                LayerCache { s, pre, out }
            }
        };
        caches.push(cache);
    }
    caches
}

fn act_grad(activation: Activation, pre: &[f64], dout: &mut [f64]) {
    if activation == Activation::Relu {
        for (d, &p) in dout.iter_mut().zip(pre) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
    }
}

/// Accumulates parameter gradients into `grad` and returns the gradient with
/// respect to the stack input when `input_grad` is set.
pub fn backward_stack(
    stack: &Stack<f64>,
    x: &[f64],
    caches: &[LayerCache],
    dout: Vec<f64>,
    frames: usize,
    grad: &mut Stack<f64>,
    input_grad: bool,
) -> Option<Vec<f64>> {
    let mut delta = dout;
    for i in (0..stack.layers.len()).rev() {
        let input = if i == 0 { x } else { caches[i - 1].out.as_slice() };
        let need_dx = i > 0 || input_grad;
        let cache = &caches[i];
        match (&stack.layers[i], &mut grad.layers[i]) {
            (Layer::Dense(d), Layer::Dense(g)) => {
                act_grad(d.activation, &cache.pre, &mut delta);
                let mut dx = if need_dx { vec![0.0; frames * d.inputs] } else { Vec::new() };
                for t in 0..frames {
                    let xt = &input[t * d.inputs..(t + 1) * d.inputs];
                    for o in 0..d.outputs {
                        let da = delta[t * d.outputs + o];
                        if da == 0.0 {
                            continue;
                        }
                        g.bias[o] += da;
                        axpy(da, xt, &mut g.weights[o * d.inputs..(o + 1) * d.inputs]);
                        if need_dx {
                            axpy(da, &d.weights[o * d.inputs..(o + 1) * d.inputs], &mut dx[t * d.inputs..(t + 1) * d.inputs]);
                        }
                    }
                }
                delta = dx;
            }
            (Layer::Svdf(l), Layer::Svdf(g)) => {
                let (nn, m) = (l.nodes, l.memory);
                act_grad(l.activation, &cache.pre, &mut delta);
                let mut ds = vec![0.0; frames * nn];
                for t in 0..frames {
                    for n in 0..nn {
                        let da = delta[t * nn + n];
                        if da == 0.0 {
                            continue;
                        }
                        g.bias[n] += da;
                        let v = &l.time_filters[n * m..(n + 1) * m];
                        let gv = &mut g.time_filters[n * m..(n + 1) * m];
                        for k in 0..m.min(t + 1) {
                            gv[k] += da * cache.s[(t - k) * nn + n];
                            ds[(t - k) * nn + n] += da * v[k];
                        }
                    }
                }
                let mut dx = if need_dx { vec![0.0; frames * l.inputs] } else { Vec::new() };
                for t in 0..frames {
                    let xt = &input[t * l.inputs..(t + 1) * l.inputs];
                    for n in 0..nn {
                        let d = ds[t * nn + n];
                        if d == 0.0 {
                            continue;
                        }
                        axpy(d, xt, &mut g.feature_filters[n * l.inputs..(n + 1) * l.inputs]);
                        if need_dx {
                            axpy(
                                d,
                                &l.feature_filters[n * l.inputs..(n + 1) * l.inputs],
                                &mut dx[t * l.inputs..(t + 1) * l.inputs],
                            );
                        }
                    }
                }
                delta = dx;
            }
            _ => unreachable!("gradient stack shape differs from network"),
        }
    }
    input_grad.then_some(delta)
}

/// Everything the backward pass needs from one utterance.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub frames: usize,
    pub channels: usize,
    pub dim: usize,
    /// Normalized features per channel, `T × dim`.
    pub z: Vec<Vec<f64>>,
    pub keys: Vec<Vec<LayerCache>>,
    /// `T × channels × dim`; empty without fusion.
    pub alpha: Vec<f64>,
    pub z_star: Vec<f64>,
    pub body: Vec<LayerCache>,
    pub posteriors: Vec<f64>,
}

impl ForwardCache {
    pub fn fused(&self) -> bool {
        !self.keys.is_empty()
    }
}

/// Normalizes channel features in double precision.
pub fn normalize(net: &KwsNetwork<f64>, channels: &[FeatureMatrix]) -> Result<(Vec<Vec<f64>>, usize)> {
    let frames = check_aligned(channels)?;
    let dim = net.feature_dim();
    if channels[0].dim != dim {
        return Err(Error::Shape(format!("features have {} dims, network expects {dim}", channels[0].dim)));
    }
    let z = channels
        .iter()
        .map(|c| {
            let mut z = vec![0.0; frames * dim];
            for t in 0..frames {
                net.normalizer.apply(c.frame(t), &mut z[t * dim..(t + 1) * dim]);
            }
            z
        })
        .collect();
    Ok((z, frames))
}

pub fn forward(net: &KwsNetwork<f64>, channels: &[FeatureMatrix]) -> Result<ForwardCache> {
    let (z, frames) = normalize(net, channels)?;
    forward_normalized(net, z, frames)
}

/// Forward pass from already-normalized features.
pub fn forward_normalized(net: &KwsNetwork<f64>, z: Vec<Vec<f64>>, frames: usize) -> Result<ForwardCache> {
    let c = z.len();
    let dim = net.feature_dim();
    if c == 0 || z.iter().any(|zi| zi.len() != frames * dim) {
        return Err(Error::Shape("normalized channel features have inconsistent shapes".into()));
    }
    if frames == 0 {
        return Err(Error::Data("utterance has no frames".into()));
    }
    let (keys, alpha, z_star) = match (&net.keys, c) {
        (_, 1) => (Vec::new(), Vec::new(), z[0].clone()),
        (None, _) => {
            return Err(Error::Shape(format!("network without keys cannot fuse {c} channels")));
        }
        (Some(k), _) => {
            let keys: Vec<Vec<LayerCache>> = z.iter().map(|zi| forward_stack(k, zi, frames)).collect();
            let mut alpha = vec![0.0; frames * c * dim];
            let mut z_star = vec![0.0; frames * dim];
            for t in 0..frames {
                let r = t * dim..(t + 1) * dim;
                let logits: Vec<&[f64]> = keys.iter().map(|kc| &kc.last().unwrap().out[r.clone()]).collect();
                let rows: Vec<&[f64]> = z.iter().map(|zi| &zi[r.clone()]).collect();
                fuse_into(&logits, &rows, &mut alpha[t * c * dim..(t + 1) * c * dim], &mut z_star[r]);
            }
            (keys, alpha, z_star)
        }
    };
    let body = forward_stack(&net.body, &z_star, frames);
    let posteriors = body.last().unwrap().out.iter().map(|&o| sigmoid(o)).collect();
    Ok(ForwardCache {
        frames,
        channels: c,
        dim,
        z,
        keys,
        alpha,
        z_star,
        body,
        posteriors,
    })
}

/// Parameter gradients; the keys contribution is kept per channel.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub keys_by_channel: Vec<Stack<f64>>,
    pub body: Stack<f64>,
}

impl Gradients {
    /// Adds into an accumulator shaped like the network (keys summed over channels in order).
    pub fn accumulate_into(&self, acc: &mut KwsNetwork<f64>) {
        if let Some(k) = acc.keys.as_mut() {
            for g in &self.keys_by_channel {
                for (a, b) in k.tensors_mut().into_iter().zip(g.tensors()) {
                    axpy(1.0, b, a);
                }
            }
        }
        for (a, b) in acc.body.tensors_mut().into_iter().zip(self.body.tensors()) {
            axpy(1.0, b, a);
        }
    }
}

/// A network of the same shape with all parameters zero.
pub fn zeros_like(net: &KwsNetwork<f64>) -> KwsNetwork<f64> {
    let mut z = net.clone();
    for t in z.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    z
}

/// Backpropagates `dlogits` (one value per frame).
pub fn backward(net: &KwsNetwork<f64>, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
    let frames = cache.frames;
    if dlogits.len() != frames {
        return Err(Error::Shape(format!("{} logit gradients for {frames} frames", dlogits.len())));
    }
    let mut body = Stack::zeros(&net.body.specs())?;
    let fused = cache.fused();
    let dz_star = backward_stack(&net.body, &cache.z_star, &cache.body, dlogits.to_vec(), frames, &mut body, fused);
    let mut keys_by_channel = Vec::new();
    if let (Some(keys), Some(dz_star)) = (&net.keys, dz_star) {
        let (c, d) = (cache.channels, cache.dim);
        let mut de = vec![vec![0.0; frames * d]; c];
        let mut g = vec![0.0; c];
        for t in 0..frames {
            let alpha = &cache.alpha[t * c * d..(t + 1) * c * d];
            for j in 0..d {
                let dzs = dz_star[t * d + j];
                let z0 = cache.z[0][t * d + j];
                let mut mean = 0.0;
                for i in 0..c {
                    g[i] = dzs * (cache.z[i][t * d + j] - z0);
                    mean += alpha[i * d + j] * g[i];
                }
                for i in 0..c {
                    de[i][t * d + j] = alpha[i * d + j] * (g[i] - mean);
                }
            }
        }
        for (i, dei) in de.into_iter().enumerate() {
            let mut gk = Stack::zeros(&keys.specs())?;
            backward_stack(keys, &cache.z[i], &cache.keys[i], dei, frames, &mut gk, false);
            keys_by_channel.push(gk);
        }
    }
    let grads = Gradients { keys_by_channel, body };
    for (n, t) in grads.body.tensors().iter().enumerate() {
        if let Some(v) = t.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("body tensor {n} has gradient {v}")));
        }
    }
    for (i, k) in grads.keys_by_channel.iter().enumerate() {
        for (n, t) in k.tensors().iter().enumerate() {
            if let Some(v) = t.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("keys tensor {n} (channel {i}) has gradient {v}")));
            }
        }
    }
    Ok(grads)
}
