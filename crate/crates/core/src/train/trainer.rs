//! Mini-batch Adam training and the base / channel / attention flows.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::ChannelKind;
use crate::dsp::ChannelMode;
use crate::net::layers::{Layer, LayerSpec, Stack};
use crate::net::network::{KwsNetwork, Normalizer};
use crate::par::{self, Execution};
use crate::train::data::{Utterance, UtteranceBatch};
use crate::train::graph::{self, zeros_like, Gradients};
use crate::train::loss::{frame_ce_logit_grad, frame_ce_loss, maxpool_loss, maxpool_posterior_grad};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the max-pool loss added to the frame cross-entropy.
    pub maxpool_weight: f64,
    pub seed: u64,
    /// Attention fine-tuning only: epochs during which the base body stays fixed.
    pub freeze_base_epochs: usize,
    pub divergence_limit: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 10,
            maxpool_weight: 0.5,
            seed: 1,
            freeze_base_epochs: 0,
            divergence_limit: 1e3,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.maxpool_weight) {
            return Err(Error::Config(format!("maxpool_weight {} outside [0, 1]", self.maxpool_weight)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// Loss terms averaged over utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub frame_ce: f64,
    pub maxpool: f64,
}

impl LossParts {
    pub fn total(&self, maxpool_weight: f64) -> f64 {
        if maxpool_weight == 0.0 {
            self.frame_ce
        } else {
            self.frame_ce + maxpool_weight * self.maxpool
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub frame_ce: f64,
    pub maxpool: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: KwsNetwork<f32>,
    pub log: Vec<EpochLog>,
}

/// Loss terms of a posterior sequence and their gradient with respect to
/// the per-frame logits.
pub fn loss_and_logit_grad(
    posteriors: &[f64],
    frame_targets: &[u8],
    positive: bool,
    maxpool_weight: f64,
) -> Result<(LossParts, Vec<f64>)> {
    let p = posteriors;
    let parts = LossParts {
        frame_ce: frame_ce_loss(p, frame_targets)?,
        maxpool: maxpool_loss(p, 1, positive)?,
    };
    let mut dlogits = vec![0.0; p.len()];
    frame_ce_logit_grad(p, frame_targets, &mut dlogits);
    if maxpool_weight != 0.0 {
        let mut dp = vec![0.0; p.len()];
        maxpool_posterior_grad(p, 1, positive, &mut dp)?;
        for ((d, g), &pt) in dlogits.iter_mut().zip(&dp).zip(p) {
            if *g != 0.0 {
                *d += maxpool_weight * g * pt * (1.0 - pt);
            }
        }
    }
    Ok((parts, dlogits))
}

/// Loss of one utterance and, optionally, its parameter gradients.
pub fn utterance_objective(
    net: &KwsNetwork<f64>,
    utt: &Utterance,
    maxpool_weight: f64,
    with_grad: bool,
) -> Result<(LossParts, Option<Gradients>)> {
    let cache = graph::forward(net, &utt.channels)?;
    if !with_grad {
        let p = &cache.posteriors;
        let parts = LossParts {
            frame_ce: frame_ce_loss(p, &utt.frame_targets)?,
            maxpool: maxpool_loss(p, 1, utt.positive)?,
        };
        return Ok((parts, None));
    }
    let (parts, dlogits) = loss_and_logit_grad(&cache.posteriors, &utt.frame_targets, utt.positive, maxpool_weight)?;
    let grads = graph::backward(net, &cache, &dlogits)?;
    Ok((parts, Some(grads)))
}

/// Mean losses over a set without updating anything.
pub fn evaluate_loss(net: &KwsNetwork<f64>, data: &UtteranceBatch, cfg: &TrainConfig) -> Result<LossParts> {
    if data.is_empty() {
        return Err(Error::Data("empty data set".into()));
    }
    let losses = par::try_map_indexed(cfg.execution, data.len(), |i| {
        utterance_objective(net, &data.utterances[i], cfg.maxpool_weight, false).map(|r| r.0)
    })?;
    let n = losses.len() as f64;
    Ok(LossParts {
        frame_ce: losses.iter().map(|l| l.frame_ce).sum::<f64>() / n,
        maxpool: losses.iter().map(|l| l.maxpool).sum::<f64>() / n,
    })
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &KwsNetwork<f64>) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// Updates tensors whose index is `>= first`.
    fn update(&mut self, net: &mut KwsNetwork<f64>, grad: &KwsNetwork<f64>, cfg: &TrainConfig, first: usize) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        for (i, (w, g)) in net.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            if i < first {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..w.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                w[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Runs Adam over `data`; with `frozen_body_epochs > 0` only the keys network
/// is updated during the first epochs.
pub fn train_network(
    net: &mut KwsNetwork<f64>,
    data: &UtteranceBatch,
    cfg: &TrainConfig,
    frozen_body_epochs: usize,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let keys_tensors = net.keys.as_ref().map_or(0, |k| k.tensors().len());
    let total_tensors = net.tensors().len();
    let mut adam = Adam::new(net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let first = if epoch < frozen_body_epochs { keys_tensors } else { 0 };
        if first >= total_tensors {
            return Err(Error::Config("nothing to train: body frozen and no keys network".into()));
        }
        let mut sum = LossParts::default();
        for batch in order.chunks(cfg.batch_size) {
            let results = par::try_map_indexed(cfg.execution, batch.len(), |i| {
                utterance_objective(net, &data.utterances[batch[i]], cfg.maxpool_weight, true)
            })?;
            let mut acc = zeros_like(net);
            for (parts, grads) in &results {
                sum.frame_ce += parts.frame_ce;
                sum.maxpool += parts.maxpool;
                grads.as_ref().expect("gradients requested").accumulate_into(&mut acc);
            }
            let scale = 1.0 / batch.len() as f64;
            for t in acc.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
            adam.update(net, &acc, cfg, first);
        }
        let n = data.len() as f64;
        let parts = LossParts {
            frame_ce: sum.frame_ce / n,
            maxpool: sum.maxpool / n,
        };
        let total = parts.total(cfg.maxpool_weight);
        if !total.is_finite() || total > cfg.divergence_limit {
            return Err(Error::Diverged(format!("epoch {epoch}: loss {total}")));
        }
        log.push(EpochLog {
            epoch,
            frame_ce: parts.frame_ce,
            maxpool: parts.maxpool,
            total,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Trains a fresh body on single-channel omni data.
pub fn train_base(data: &UtteranceBatch, body: &[LayerSpec], cfg: &TrainConfig) -> Result<TrainOutcome> {
    data.validate()?;
    data.require_both_classes()?;
    let omni = ChannelKind::Omni.tag();
    if data.channel_tags != [omni.clone()] {
        return Err(Error::Data(format!(
            "base training expects the {omni} channel only, got {:?}",
            data.channel_tags
        )));
    }
    let dim = body.first().map_or(0, LayerSpec::inputs);
    let normalizer = Normalizer::fit(dim, data.channel_frames(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stack = Stack::<f64>::zeros(body)?;
    stack.init_random(&mut rng);
    if let Some(Layer::Dense(d)) = stack.layers.last_mut() {
        let b = logit(data.positive_frame_rate());
        d.bias.iter_mut().for_each(|v| *v = b);
    }
    let mut net = KwsNetwork::new(omni, normalizer, None, stack)?;
    let log = train_network(&mut net, data, cfg, 0)?;
    Ok(TrainOutcome {
        network: net.cast(),
        log,
    })
}

/// Continues training all parameters of `base` on one other channel.
pub fn finetune_channel(
    base: &KwsNetwork<f32>,
    data: &UtteranceBatch,
    channel: ChannelKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if base.is_attention() {
        return Err(Error::Config("channel fine-tuning starts from a single-channel network".into()));
    }
    if data.channel_tags != [channel.tag()] {
        return Err(Error::Data(format!(
            "data set channels {:?} do not match requested channel {}",
            data.channel_tags,
            channel.tag()
        )));
    }
    data.require_both_classes()?;
    let mut net = base.cast::<f64>();
    net.channel_tag = channel.tag();
    let log = train_network(&mut net, data, cfg, 0)?;
    Ok(TrainOutcome {
        network: net.cast(),
        log,
    })
}

/// Inserts a keys network in front of `base` and fine-tunes both jointly.
///
/// The keys network's output projection starts at zero, so the initial
/// fusion is a uniform average.
pub fn finetune_attention(
    base: &KwsNetwork<f32>,
    data: &UtteranceBatch,
    mode: ChannelMode,
    keys: &[LayerSpec],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let kinds = mode.channels();
    if kinds.len() < 2 {
        return Err(Error::Config(format!("attention needs at least two channels, mode {} has one", mode.name())));
    }
    let tags: Vec<String> = kinds.iter().map(|k| k.tag()).collect();
    if data.channel_tags != tags {
        return Err(Error::Data(format!(
            "data set channels {:?} do not match mode {} ({:?})",
            data.channel_tags,
            mode.name(),
            tags
        )));
    }
    data.require_both_classes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b65_7973);
    let mut keys_net = Stack::<f64>::zeros(keys)?;
    keys_net.init_random(&mut rng);
    if let Some(last) = keys_net.layers.last_mut() {
        for t in last.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut net = KwsNetwork::new(mode.name(), base.normalizer.clone(), Some(keys_net), base.body.cast())?;
    let log = train_network(&mut net, data, cfg, cfg.freeze_base_epochs)?;
    Ok(TrainOutcome {
        network: net.cast(),
        log,
    })
}

pub fn write_log_csv(w: &mut impl Write, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch,frame_ce,maxpool,total,wall_seconds")?;
    for e in log {
        writeln!(w, "{},{},{},{},{:.3}", e.epoch, e.frame_ce, e.maxpool, e.total, e.wall_seconds)?;
    }
    Ok(())
}
