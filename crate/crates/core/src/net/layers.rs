//! Dense and SVDF layers with streaming state.
//!
//! An SVDF node factors a time-frequency filter into a feature filter applied
//! to each incoming frame and a temporal filter over the last `memory`
//! feature-filter outputs:
//!
//! ```text
//! s_t[n] = feature_filter[n] · x_t
//! y_t[n] = act( Σ_{k < memory} time_filter[n][k] · s_{t-k}[n] + bias[n] )
//! ```

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating-point type a network can be evaluated in.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn div(self, rhs: Self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            Activation::Linear => x,
        }
    }
}

/// Serializable layer description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Svdf {
        inputs: usize,
        nodes: usize,
        memory: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn inputs(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } | LayerSpec::Svdf { inputs, .. } => inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Svdf { nodes, .. } => nodes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => outputs * inputs + outputs,
            LayerSpec::Svdf {
                inputs, nodes, memory, ..
            } => nodes * inputs + nodes * memory + nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Svdf<T> {
    pub inputs: usize,
    pub nodes: usize,
    pub memory: usize,
    pub activation: Activation,
    /// Row-major `nodes × inputs`.
    pub feature_filters: Vec<T>,
    /// Row-major `nodes × memory`; column `k` weights the output `k` frames back.
    pub time_filters: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Svdf(Svdf<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(spec: &LayerSpec) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Dense {
                inputs,
                outputs,
                activation,
            } => Layer::Dense(Dense {
                inputs,
                outputs,
                activation,
                weights: vec![T::ZERO; inputs * outputs],
                bias: vec![T::ZERO; outputs],
            }),
            LayerSpec::Svdf {
                inputs,
                nodes,
                memory,
                activation,
            } => {
                if memory == 0 {
                    return Err(Error::Config("SVDF memory must be at least 1".into()));
                }
                Layer::Svdf(Svdf {
                    inputs,
                    nodes,
                    memory,
                    activation,
                    feature_filters: vec![T::ZERO; nodes * inputs],
                    time_filters: vec![T::ZERO; nodes * memory],
                    bias: vec![T::ZERO; nodes],
                })
            }
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                activation: d.activation,
            },
            Layer::Svdf(s) => LayerSpec::Svdf {
                inputs: s.inputs,
                nodes: s.nodes,
                memory: s.memory,
                activation: s.activation,
            },
        }
    }

    /// Parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Svdf(s) => vec![&s.feature_filters, &s.time_filters, &s.bias],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::Svdf(s) => vec![&mut s.feature_filters, &mut s.time_filters, &mut s.bias],
        }
    }
}

/// Per-layer streaming state.
#[derive(Debug, Clone)]
pub enum LayerState<T> {
    Dense {
        out: Vec<T>,
    },
    Svdf {
        /// `nodes × memory`, newest feature-filter output at `head`.
        history: Vec<T>,
        head: usize,
        out: Vec<T>,
    },
}

impl<T: Scalar> LayerState<T> {
    pub fn output(&self) -> &[T] {
        match self {
            LayerState::Dense { out } | LayerState::Svdf { out, .. } => out,
        }
    }
}

/// Feed-forward sequence of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack<T> {
    pub layers: Vec<Layer<T>>,
}

/// Streaming state for a [`Stack`].
#[derive(Debug, Clone)]
pub struct StackState<T> {
    layers: Vec<LayerState<T>>,
}

impl<T: Scalar> StackState<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().map_or(&[], |l| l.output())
    }
}

impl<T: Scalar> Stack<T> {
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        for w in specs.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer output {} feeds layer input {}",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        Ok(Self {
            layers: specs.iter().map(Layer::zeros).collect::<Result<_>>()?,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec().inputs())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec().outputs())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(Layer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(Layer::tensors_mut).collect()
    }

    /// Uniform fan-in initialization; SVDF time filters start as a decaying
    /// average so the initial temporal response is smooth.
    pub fn init_random<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let a = (6.0 / (d.inputs + d.outputs) as f64).sqrt();
                    for w in &mut d.weights {
                        *w = T::from_f64(rng.random_range(-a..a));
                    }
                }
                Layer::Svdf(s) => {
                    let a = (6.0 / (s.inputs + s.nodes) as f64).sqrt();
                    for w in &mut s.feature_filters {
                        *w = T::from_f64(rng.random_range(-a..a));
                    }
                    let m = s.memory as f64;
                    for n in 0..s.nodes {
                        for k in 0..s.memory {
                            let base = 2.0 / m * (1.0 - k as f64 / m);
                            s.time_filters[n * s.memory + k] = T::from_f64(base * rng.random_range(0.5..1.5));
                        }
                    }
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Stack<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        Stack {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => Layer::Dense(Dense {
                        inputs: d.inputs,
                        outputs: d.outputs,
                        activation: d.activation,
                        weights: conv(&d.weights),
                        bias: conv(&d.bias),
                    }),
                    Layer::Svdf(s) => Layer::Svdf(Svdf {
                        inputs: s.inputs,
                        nodes: s.nodes,
                        memory: s.memory,
                        activation: s.activation,
                        feature_filters: conv(&s.feature_filters),
                        time_filters: conv(&s.time_filters),
                        bias: conv(&s.bias),
                    }),
                })
                .collect(),
        }
    }

    pub fn new_state(&self) -> StackState<T> {
        StackState {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => LayerState::Dense {
                        out: vec![T::ZERO; d.outputs],
                    },
                    Layer::Svdf(s) => LayerState::Svdf {
                        history: vec![T::ZERO; s.nodes * s.memory],
                        head: 0,
                        out: vec![T::ZERO; s.nodes],
                    },
                })
                .collect(),
        }
    }

    /// Advances the state by one frame; the result is in `state.output()`.
    pub fn step(&self, state: &mut StackState<T>, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "frame has {} values, stack expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        for i in 0..self.layers.len() {
            let (prev, rest) = state.layers.split_at_mut(i);
            let x = if i == 0 { input } else { prev[i - 1].output() };
            step_layer(&self.layers[i], &mut rest[0], x);
        }
        Ok(())
    }
}

fn step_layer<T: Scalar>(layer: &Layer<T>, state: &mut LayerState<T>, x: &[T]) {
    match (layer, state) {
        (Layer::Dense(d), LayerState::Dense { out }) => {
            for (o, (row, b)) in out.iter_mut().zip(d.weights.chunks_exact(d.inputs).zip(&d.bias)) {
                *o = d.activation.apply(dot(row, x) + *b);
            }
        }
        (Layer::Svdf(s), LayerState::Svdf { history, head, out }) => {
            let m = s.memory;
            *head = (*head + m - 1) % m;
            let h = *head;
            for n in 0..s.nodes {
                let filt = &s.feature_filters[n * s.inputs..(n + 1) * s.inputs];
                let hist = &mut history[n * m..(n + 1) * m];
                hist[h] = dot(filt, x);
                let tf = &s.time_filters[n * m..(n + 1) * m];
                // lag k lives at (h + k) % m
                let a = dot(&tf[..m - h], &hist[h..]) + dot(&tf[m - h..], &hist[..h]);
                out[n] = s.activation.apply(a + s.bias[n]);
            }
        }
        _ => unreachable!("layer state does not match layer kind"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svdf(memory: usize, nodes: usize, inputs: usize) -> Stack<f64> {
        Stack::zeros(&[LayerSpec::Svdf {
            inputs,
            nodes,
            memory,
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn memory_one_is_affine() {
        let mut st = svdf(1, 2, 3);
        if let Layer::Svdf(s) = &mut st.layers[0] {
            s.feature_filters = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
            s.time_filters = vec![1.0, 1.0];
            s.bias = vec![0.25, -0.5];
        }
        let mut state = st.new_state();
        for x in [[1.0, 0.0, 2.0], [-1.0, 4.0, 0.5]] {
            st.step(&mut state, &x).unwrap();
            let want0 = x[0] + 2.0 * x[1] + 3.0 * x[2] + 0.25;
            let want1 = -x[0] + 0.5 * x[1] - 0.5;
            assert_eq!(state.output(), &[want0, want1]);
        }
    }

    #[test]
    fn zero_time_filter_gives_bias() {
        let mut st = svdf(4, 2, 2);
        if let Layer::Svdf(s) = &mut st.layers[0] {
            s.activation = Activation::Relu;
            s.feature_filters = vec![1.0, 1.0, 2.0, -3.0];
            s.bias = vec![0.7, -0.2];
        }
        let mut state = st.new_state();
        for x in [[5.0, 1.0], [-2.0, 9.0], [0.3, 0.3]] {
            st.step(&mut state, &x).unwrap();
            assert_eq!(state.output(), &[0.7, 0.0]);
        }
    }

    #[test]
    fn hand_computed_three_frame_memory() {
        // 2 nodes, 1 input, memory 3
        let mut st = svdf(3, 2, 1);
        if let Layer::Svdf(s) = &mut st.layers[0] {
            s.feature_filters = vec![2.0, -1.0];
            s.time_filters = vec![1.0, 0.5, 0.25, 0.0, 1.0, -1.0];
            s.bias = vec![0.0, 1.0];
        }
        let mut state = st.new_state();
        // s-values: node0 = 2x, node1 = -x for x = 1, 2, 3
        // node0: t0: 2; t1: 4 + 0.5*2 = 5; t2: 6 + 0.5*4 + 0.25*2 = 8.5
        // node1: t0: 1; t1: 0 + (-1) + 1 = 0; t2: (-2) - (-1) + 1 = 0
        let want = [[2.0, 1.0], [5.0, 0.0], [8.5, 0.0]];
        for (x, w) in [1.0, 2.0, 3.0].iter().zip(want) {
            st.step(&mut state, &[*x]).unwrap();
            assert_eq!(state.output(), &w);
        }
    }

    #[test]
    fn shape_errors() {
        let st = svdf(2, 2, 3);
        let mut state = st.new_state();
        assert!(matches!(st.step(&mut state, &[1.0]), Err(Error::Shape(_))));
        let bad = Stack::<f64>::zeros(&[
            LayerSpec::Dense {
                inputs: 3,
                outputs: 4,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                inputs: 5,
                outputs: 1,
                activation: Activation::Linear,
            },
        ]);
        assert!(bad.is_err());
    }
}
