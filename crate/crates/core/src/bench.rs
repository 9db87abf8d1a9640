//! Real-time factor, model size and memory estimates for the front-ends and
//! detector variants.
//!
//! Timings run on the calling thread only. Each measurement discards one
//! warm-up run and reports the median real-time factor over the repeats.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::lab::{lab_record, LabProtocol};
use crate::array::{ArrayGeometry, MultichannelClip};
use crate::dsp::{anc_process, beamform, AncConfig, ChannelKind, ChannelMode, FrontEnd};
use crate::eval::Approach;
use crate::net::checkpoint::write_checkpoint;
use crate::net::detect::{detect_events, EventConfig};
use crate::net::layers::{LayerSpec, Stack};
use crate::net::network::{KwsNetwork, Normalizer};
use crate::net::presets::{base_specs, base_x2_specs, keys_specs, Scale, FEATURE_DIM};
use crate::{Error, Result};

/// Shortest input accepted by the benchmarks, in seconds.
pub const MIN_DURATION_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub component: String,
    pub host: String,
    /// Real-time factor of every timed repeat.
    pub samples: Vec<f64>,
    pub rtf_median: f64,
    /// Coefficient of variation of the repeats.
    pub rtf_cv: f64,
    pub model_size_bytes: usize,
    pub peak_memory_estimate_bytes: usize,
}

impl BenchResult {
    fn from_samples(component: String, samples: Vec<f64>, model_size_bytes: usize, memory: usize) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        Self {
            component,
            host: host_descriptor(),
            samples,
            rtf_median: median,
            rtf_cv: var.sqrt() / mean,
            model_size_bytes,
            peak_memory_estimate_bytes: memory,
        }
    }
}

pub fn host_descriptor() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} ({cores} cores, 1 worker)", std::env::consts::ARCH, std::env::consts::OS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrontendAlgorithm {
    #[serde(rename = "bf6")]
    Bf6,
    #[serde(rename = "anc")]
    Anc,
}

impl FrontendAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            FrontendAlgorithm::Bf6 => "bf6",
            FrontendAlgorithm::Anc => "anc",
        }
    }
}

impl fmt::Display for FrontendAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrontendAlgorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bf6" => Ok(FrontendAlgorithm::Bf6),
            "anc" => Ok(FrontendAlgorithm::Anc),
            _ => Err(Error::Config(format!("unknown front-end '{s}' (expected bf6 or anc)"))),
        }
    }
}

/// Seven-channel test input: directional noise with one keyword near the end.
pub fn bench_input(duration_s: f64, seed: u64) -> Result<MultichannelClip> {
    if !(duration_s >= MIN_DURATION_S) {
        return Err(Error::Config(format!(
            "benchmark input must be at least {MIN_DURATION_S} s, got {duration_s} s"
        )));
    }
    let protocol = LabProtocol {
        records: 1,
        record_s: duration_s,
        keyword_onset_s: [duration_s - 2.0, duration_s - 1.0],
        ..LabProtocol::default()
    };
    lab_record(&ArrayGeometry::default(), &protocol, seed, 5)
}

/// Times `run` once for warm-up and then `repeats` times.
fn time_runs(repeats: usize, audio_s: f64, mut run: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    if repeats == 0 {
        return Err(Error::Config("at least one repeat is needed".into()));
    }
    run()?;
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            run()?;
            Ok(t.elapsed().as_secs_f64() / audio_s)
        })
        .collect()
}

fn frontend_state_bytes(alg: FrontendAlgorithm, anc: &AncConfig, mics: usize) -> usize {
    match alg {
        // two tap lines, live and frozen coefficients, one second of snapshots
        FrontendAlgorithm::Anc => {
            let hops = (anc.freeze_s * anc.sample_rate as f64 / anc.snapshot_hop as f64).ceil() as usize + 1;
            8 * (4 * anc.taps + 4 * anc.taps + hops * 2 * anc.taps + anc.latency())
        }
        // one delay line per microphone per beam
        FrontendAlgorithm::Bf6 => 8 * 6 * mics * crate::dsp::fracdelay::TAPS,
    }
}

pub fn bench_frontend(alg: FrontendAlgorithm, duration_s: f64, repeats: usize) -> Result<BenchResult> {
    let clip = bench_input(duration_s, 11)?;
    let fe = FrontEnd::default();
    let samples = time_runs(repeats, clip.duration_s(), || {
        match alg {
            FrontendAlgorithm::Anc => {
                std::hint::black_box(anc_process(&clip, &fe.anc)?);
            }
            FrontendAlgorithm::Bf6 => {
                std::hint::black_box(beamform(&clip, &fe.beams)?);
            }
        }
        Ok(())
    })?;
    let memory = frontend_state_bytes(alg, &fe.anc, clip.num_channels());
    Ok(BenchResult::from_samples(format!("frontend:{}", alg.name()), samples, 0, memory))
}

/// A network together with the channels it reads.
#[derive(Debug, Clone)]
pub struct DetectorMember {
    pub channels: Vec<ChannelKind>,
    pub network: KwsNetwork<f32>,
}

fn random_stack(specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Stack<f32>> {
    let mut s = Stack::<f64>::zeros(specs)?;
    s.init_random(rng);
    Ok(s.cast())
}

/// Randomly initialized networks with the topology of `approach` at
/// `scale`. Timing and size do not depend on the weight values.
pub fn preset_detector(approach: Approach, scale: Scale, seed: u64) -> Result<Vec<DetectorMember>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normalizer::identity(FEATURE_DIM);
    let mut single = |specs: Vec<LayerSpec>, kind: ChannelKind| -> Result<DetectorMember> {
        Ok(DetectorMember {
            channels: vec![kind],
            network: KwsNetwork::new(kind.tag(), norm.clone(), None, random_stack(&specs, &mut rng)?)?,
        })
    };
    let base = base_specs(scale);
    Ok(match approach {
        Approach::Base => vec![single(base, ChannelKind::Omni)?],
        Approach::BaseAnc => vec![single(base, ChannelKind::Anc)?],
        Approach::BaseX2 => vec![single(base_x2_specs(scale), ChannelKind::Omni)?],
        Approach::EnsembleAnc => vec![single(base.clone(), ChannelKind::Omni)?, single(base, ChannelKind::Anc)?],
        Approach::AttentionAnc | Approach::AttentionBf => {
            let mode = if approach == Approach::AttentionAnc {
                ChannelMode::OmniAnc
            } else {
                ChannelMode::OmniBf6
            };
            let keys = random_stack(&keys_specs(scale), &mut rng)?;
            let body = random_stack(&base, &mut rng)?;
            vec![DetectorMember {
                channels: mode.channels(),
                network: KwsNetwork::new(mode.name(), norm.clone(), Some(keys), body)?,
            }]
        }
    })
}

pub fn checkpoint_bytes(net: &KwsNetwork<f32>) -> Result<usize> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net)?;
    Ok(buf.len())
}

/// Streaming state of a stack in values: SVDF histories plus layer outputs.
fn stack_state_values(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .map(|s| match *s {
            LayerSpec::Svdf { nodes, memory, .. } => nodes * memory + s.outputs(),
            LayerSpec::Dense { .. } => s.outputs(),
        })
        .sum()
}

fn member_memory(m: &DetectorMember) -> usize {
    let c = m.channels.len();
    let keys = m.network.keys.as_ref().map_or(0, |k| c * stack_state_values(&k.specs()));
    let body = stack_state_values(&m.network.body.specs());
    let fusion = if m.network.is_attention() { 2 * c * FEATURE_DIM } else { FEATURE_DIM };
    4 * (m.network.param_count() + keys + body + fusion)
}

/// Real-time factor of the whole path from seven microphone channels to
/// detection events, including the front-ends and feature extraction.
pub fn bench_detector(component: &str, members: &[DetectorMember], duration_s: f64, repeats: usize) -> Result<BenchResult> {
    if members.is_empty() {
        return Err(Error::Config("a detector needs at least one network".into()));
    }
    let clip = bench_input(duration_s, 13)?;
    let fe = FrontEnd::default();
    let mut kinds: Vec<ChannelKind> = Vec::new();
    for m in members {
        for k in &m.channels {
            if !kinds.contains(k) {
                kinds.push(*k);
            }
        }
    }
    let samples = time_runs(repeats, clip.duration_s(), || {
        let feats = fe.features(&clip, &kinds)?;
        for m in members {
            let chans: Vec<_> = m
                .channels
                .iter()
                .map(|k| feats[kinds.iter().position(|x| x == k).expect("channel computed")].clone())
                .collect();
            let p = m.network.posteriors(&chans)?;
            std::hint::black_box(detect_events(&p, 0.5, EventConfig::default())?);
        }
        Ok(())
    })?;
    let size = members.iter().map(|m| checkpoint_bytes(&m.network)).sum::<Result<usize>>()?;
    let mut memory: usize = members.iter().map(member_memory).sum();
    if kinds.contains(&ChannelKind::Anc) {
        memory += frontend_state_bytes(FrontendAlgorithm::Anc, &fe.anc, clip.num_channels());
    }
    if kinds.iter().any(|k| matches!(k, ChannelKind::Beam(_))) {
        memory += frontend_state_bytes(FrontendAlgorithm::Bf6, &fe.anc, clip.num_channels());
    }
    memory += 8 * kinds.len() * fe.mel.config().fft_len;
    Ok(BenchResult::from_samples(format!("detector:{component}"), samples, size, memory))
}

pub fn write_bench_csv(w: &mut impl Write, results: &[BenchResult]) -> Result<()> {
    writeln!(w, "component,host,rtf_median,rtf_cv,model_bytes")?;
    for r in results {
        writeln!(
            w,
            "{},\"{}\",{:.6},{:.4},{}",
            r.component, r.host, r.rtf_median, r.rtf_cv, r.model_size_bytes
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_input_is_rejected() {
        assert!(matches!(bench_input(0.0, 1), Err(Error::Config(_))));
        assert!(bench_frontend(FrontendAlgorithm::Anc, 0.0, 3).is_err());
    }

    #[test]
    fn repeats_are_recorded() {
        let r = bench_frontend(FrontendAlgorithm::Anc, 10.0, 5).unwrap();
        assert_eq!(r.samples.len(), 5);
        assert!(r.rtf_median > 0.0 && r.rtf_cv >= 0.0);
        assert_eq!(r.component, "frontend:anc");
    }

    #[test]
    fn median_of_even_count() {
        let r = BenchResult::from_samples("x".into(), vec![4.0, 1.0, 3.0, 2.0], 0, 0);
        assert_eq!(r.rtf_median, 2.5);
    }

    #[test]
    fn ensemble_is_two_base_checkpoints() {
        let base = preset_detector(Approach::Base, Scale::Desk, 1).unwrap();
        let ens = preset_detector(Approach::EnsembleAnc, Scale::Desk, 1).unwrap();
        let b = checkpoint_bytes(&base[0].network).unwrap();
        let e: usize = ens.iter().map(|m| checkpoint_bytes(&m.network).unwrap()).sum();
        // channel tags differ in length by one byte
        assert!(e.abs_diff(2 * b) <= 1, "{e} vs 2 x {b}");
    }
}
