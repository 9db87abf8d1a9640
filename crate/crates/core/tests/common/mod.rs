//! Shared oracles for the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::time::Instant;

use mckws::net::layers::{Layer, Stack};
use mckws::net::presets::{self, Scale};
use mckws::net::{KwsNetwork, Normalizer};
use mckws::train::graph::{self, forward_normalized, forward_stack_from, zeros_like};
use mckws::train::{frame_ce_loss, loss_and_logit_grad, maxpool_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const LAMBDA_MP: f64 = 0.5;

pub struct GradCheck {
    pub params: usize,
    /// Parameters whose ±step changes a ReLU pattern or the max-pool argmax;
    /// central differences are not a derivative estimate there.
    pub kinked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub seconds: f64,
    pub errors: Vec<f64>,
}

/// Desk-width two-SVDF-layer body with a desk keys network, all random.
pub fn grad_check_net(seed: u64) -> KwsNetwork<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = Stack::<f64>::zeros(&presets::grad_check_body()).unwrap();
    body.init_random(&mut rng);
    let mut keys = Stack::<f64>::zeros(&presets::keys_specs(Scale::Desk)).unwrap();
    keys.init_random(&mut rng);
    for layer in body.layers.iter_mut().chain(keys.layers.iter_mut()) {
        for t in layer.tensors_mut() {
            for v in t.iter_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
    }
    KwsNetwork::new("grad-check", Normalizer::identity(40), Some(keys), body).unwrap()
}

pub fn random_inputs(seed: u64, channels: usize, frames: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    (0..channels)
        .map(|_| (0..frames * 40).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Sign pattern of every ReLU pre-activation plus the posterior argmax.
fn pattern(stacks: &[(&Stack<f64>, &[graph::LayerCache])], logits: &[f64]) -> Vec<bool> {
    let mut out = Vec::new();
    for (stack, caches) in stacks {
        let skip = stack.layers.len() - caches.len();
        for (layer, cache) in stack.layers[skip..].iter().zip(caches.iter()) {
            let relu = match layer {
                Layer::Dense(d) => d.activation == mckws::net::Activation::Relu,
                Layer::Svdf(s) => s.activation == mckws::net::Activation::Relu,
            };
            if relu {
                out.extend(cache.pre.iter().map(|&v| v > 0.0));
            }
        }
    }
    let arg = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0;
    out.extend((0..logits.len()).map(|i| i == arg));
    out
}

fn full_pattern(net: &KwsNetwork<f64>, cache: &graph::ForwardCache) -> Vec<bool> {
    let keys = net.keys.as_ref().unwrap();
    let mut stacks: Vec<(&Stack<f64>, &[graph::LayerCache])> =
        cache.keys.iter().map(|k| (keys, k.as_slice())).collect();
    stacks.push((&net.body, cache.body.as_slice()));
    pattern(&stacks, &cache.body.last().unwrap().out)
}

fn loss_from_logits(logits: &[f64], targets: &[u8], positive: bool) -> f64 {
    let p: Vec<f64> = logits.iter().map(|&o| 1.0 / (1.0 + (-o).exp())).collect();
    frame_ce_loss(&p, targets).unwrap() + LAMBDA_MP * maxpool_loss(&p, 1, positive).unwrap()
}

fn full_loss(net: &KwsNetwork<f64>, z: &[Vec<f64>], frames: usize, targets: &[u8], positive: bool) -> (f64, Vec<bool>) {
    let cache = forward_normalized(net, z.to_vec(), frames).unwrap();
    let logits = &cache.body.last().unwrap().out;
    (loss_from_logits(logits, targets, positive), full_pattern(net, &cache))
}

/// Compares analytic gradients with central differences for every parameter.
pub fn gradient_check(seed: u64, channels: usize, frames: usize, floor: f64) -> GradCheck {
    let started = Instant::now();
    let mut net = grad_check_net(seed);
    let z = random_inputs(seed, channels, frames);
    let targets: Vec<u8> = (0..frames).map(|t| u8::from((frames * 2 / 5..frames * 7 / 10).contains(&t))).collect();
    let positive = true;

    let cache = forward_normalized(&net, z.clone(), frames).unwrap();
    let (_, dlogits) = loss_and_logit_grad(&cache.posteriors, &targets, positive, LAMBDA_MP).unwrap();
    let grads = graph::backward(&net, &cache, &dlogits).unwrap();
    let mut analytic = zeros_like(&net);
    grads.accumulate_into(&mut analytic);
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();

    let base_full = full_pattern(&net, &cache);
    let mut errors = Vec::new();
    let mut kinked = 0;
    let mut worst = (0.0, String::new());
    let mut record = |a: f64, n: f64, smooth: bool, what: String| {
        if !smooth {
            kinked += 1;
            return;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, format!("{what}: analytic {a:e}, numeric {n:e}"));
        }
        errors.push(rel);
    };

    let keys_tensors = net.keys.as_ref().unwrap().tensors().len();
    for ti in 0..keys_tensors {
        let len = net.keys.as_ref().unwrap().tensors()[ti].len();
        for i in 0..len {
            let orig = net.keys.as_ref().unwrap().tensors()[ti][i];
            net.keys.as_mut().unwrap().tensors_mut()[ti][i] = orig + FD_STEP;
            let (up, pu) = full_loss(&net, &z, frames, &targets, positive);
            net.keys.as_mut().unwrap().tensors_mut()[ti][i] = orig - FD_STEP;
            let (down, pd) = full_loss(&net, &z, frames, &targets, positive);
            net.keys.as_mut().unwrap().tensors_mut()[ti][i] = orig;
            let smooth = pu == base_full && pd == base_full;
            record(analytic[ti][i], (up - down) / (2.0 * FD_STEP), smooth, format!("keys tensor {ti}[{i}]"));
        }
    }

    // body parameters only affect layers from their own onwards
    let mut offset = keys_tensors;
    for l in 0..net.body.layers.len() {
        let input: Vec<f64> = if l == 0 { cache.z_star.clone() } else { cache.body[l - 1].out.clone() };
        let suffix = &cache.body[l..];
        let base_suffix = pattern(&[(&net.body, suffix)], &suffix.last().unwrap().out);
        let n_tensors = net.body.layers[l].tensors().len();
        for ti in 0..n_tensors {
            let len = net.body.layers[l].tensors()[ti].len();
            for i in 0..len {
                let orig = net.body.layers[l].tensors()[ti][i];
                let eval = |v: f64, net: &mut KwsNetwork<f64>| {
                    net.body.layers[l].tensors_mut()[ti][i] = v;
                    let out = forward_stack_from(&net.body, l, &input, frames);
                    let logits = &out.last().unwrap().out;
                    (loss_from_logits(logits, &targets, positive), pattern(&[(&net.body, &out)], logits))
                };
                let (up, pu) = eval(orig + FD_STEP, &mut net);
                let (down, pd) = eval(orig - FD_STEP, &mut net);
                net.body.layers[l].tensors_mut()[ti][i] = orig;
                let kind = match net.body.layers[l] {
                    Layer::Dense(_) => "dense",
                    Layer::Svdf(_) => "svdf",
                };
                record(
                    analytic[offset + ti][i],
                    (up - down) / (2.0 * FD_STEP),
                    pu == base_suffix && pd == base_suffix,
                    format!("body layer {l} ({kind}) tensor {ti}[{i}]"),
                );
            }
        }
        offset += n_tensors;
    }
    GradCheck {
        params: errors.len() + kinked,
        kinked,
        max_rel_err: worst.0,
        worst: worst.1,
        seconds: started.elapsed().as_secs_f64(),
        errors,
    }
}

// ---------------------------------------------------------------------------
// Signal measurement

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Welch estimate with a Hann window and 50 % overlap; one-sided bins
/// `0..=nfft/2`, unnormalized.
pub fn welch_psd(x: &[f64], nfft: usize) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let window: Vec<f64> = (0..nfft)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nfft as f64).cos())
        .collect();
    let mut psd = vec![0.0; nfft / 2 + 1];
    let mut segments = 0;
    let mut start = 0;
    while start + nfft <= x.len() {
        let mut buf: Vec<Complex<f64>> = x[start..start + nfft]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (p, c) in psd.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        segments += 1;
        start += nfft / 2;
    }
    for p in &mut psd {
        *p /= segments.max(1) as f64;
    }
    psd
}

/// Energy between `lo_hz` and `hi_hz` from one zero-padded DFT of `x`.
pub fn band_energy(x: &[f64], lo_hz: f64, hi_hz: f64, sample_rate: f64) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = x.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * sample_rate / n as f64;
            f >= lo_hz && f <= hi_hz
        })
        .map(|k| buf[k].norm_sqr())
        .sum()
}

/// Gaussian white noise with unit variance.
pub fn white(seed: u64, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Array gain of the 0° delay-and-sum beam over the center microphone, dB.
///
/// The source is white noise low-passed to 6 kHz and rendered as a plane
/// wave from 0°; every microphone adds independent unit-variance white
/// noise. By linearity the beam is applied to the source and to the noise
/// separately, and SNR is compared on the interior samples.
pub fn array_gain_db(seed: u64, duration_s: f64) -> f64 {
    use mckws::array::{propagate_f64, ArrayGeometry, SourceSpec};
    use mckws::dsp::beam::BeamSet;
    let g = ArrayGeometry::default();
    let n = (duration_s * 16000.0) as usize;
    let src = lowpass(&white(seed, n + 256), 6000.0 / 16000.0);
    let wave: Vec<f32> = src[128..128 + n].iter().map(|&v| v as f32).collect();
    let signal = propagate_f64(&g, &SourceSpec::new(0.0, 94.0, wave)).unwrap();
    let noise: Vec<Vec<f64>> = (0..g.num_mics() as u64).map(|m| white(seed * 31 + m + 1, n)).collect();
    let beams = BeamSet::with_azimuths(&g, &[0.0]).unwrap();
    let bs = &beams.apply(&signal).unwrap()[0];
    let bn = &beams.apply(&noise).unwrap()[0];
    let interior = 64..n - 64;
    let snr_beam = power(&bs[interior.clone()]) / power(&bn[interior.clone()]);
    let snr_omni = power(&signal[0][interior.clone()]) / power(&noise[0][interior]);
    db(snr_beam / snr_omni)
}

/// Windowed-sinc low-pass, cutoff as a fraction of the sample rate.
pub fn lowpass(x: &[f64], cutoff: f64) -> Vec<f64> {
    let taps = 255;
    let mid = (taps / 2) as f64;
    let h: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (taps - 1) as f64).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * i as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .filter_map(|(k, &hk)| (n + taps / 2).checked_sub(k).and_then(|j| x.get(j)).map(|&v| hk * v))
                .sum()
        })
        .collect()
}

pub struct AncMeasure {
    /// Omni over ANC noise energy in the tone band, last two seconds.
    pub attenuation_db: f64,
    /// ANC over omni keyword energy in the keyword band, dB.
    pub keyword_delta_db: f64,
    pub keyword_onset_s: f64,
}

pub const TONES_HZ: [f64; 3] = [310.0, 470.0, 730.0];
pub const TONE_BAND_HZ: (f64, f64) = (200.0, 1000.0);
pub const KEYWORD_BAND_HZ: (f64, f64) = (1800.0, 4000.0);

/// Stationary tone noise from `noise_az` for 5 s; a keyword high-passed
/// into a disjoint band arrives from 0° at `onset_s`. The keyword
/// contribution at the ANC output is the difference of the runs with and
/// without the keyword.
pub fn anc_measure(seed: u64, noise_az: f64, onset_s: f64) -> AncMeasure {
    use mckws::array::synth::{synth_keyword, VoicePreset};
    use mckws::array::{propagate_f64, ArrayGeometry, ClipMeta, Label, MultichannelClip, SourceSpec};
    use mckws::dsp::anc::{anc_process, AncConfig};
    let g = ArrayGeometry::default();
    let n = 5 * 16000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = TONES_HZ.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let tones: Vec<f32> = (0..n)
        .map(|t| {
            TONES_HZ
                .iter()
                .zip(&phases)
                .map(|(f, p)| (std::f64::consts::TAU * f * t as f64 / 16000.0 + p).sin())
                .sum::<f64>() as f32
        })
        .collect();
    let noise = propagate_f64(&g, &SourceSpec::new(noise_az, 74.0, tones)).unwrap();
    let onset = (onset_s * 16000.0) as usize;
    let raw: Vec<f64> = synth_keyword(VoicePreset::Female, seed + 1).iter().map(|&v| v as f64).collect();
    let low = lowpass(&raw, 1500.0 / 16000.0);
    let mut kw: Vec<f32> = raw.iter().zip(&low).map(|(r, l)| (r - l) as f32).collect();
    kw.truncate(n - onset);
    let keyword = propagate_f64(&g, &SourceSpec::new(0.0, 74.0, kw).with_onset(onset)).unwrap();
    let mix = |with_kw: bool| -> Vec<Vec<f64>> {
        noise
            .iter()
            .zip(&keyword)
            .map(|(nc, kc)| {
                (0..n)
                    .map(|t| nc[t] + if with_kw { kc.get(t).copied().unwrap_or(0.0) } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let run = |ch: Vec<Vec<f64>>| {
        let clip = MultichannelClip::from_f64(ch, 16000, Label::Negative, ClipMeta::default());
        let omni = clip.channel_f64(0);
        (omni, anc_process(&clip, &AncConfig::default()).unwrap().samples)
    };
    let (omni_n, anc_n) = run(mix(false));
    let (omni_k, anc_k) = run(mix(true));
    let steady = 3 * 16000..n;
    let tone_band = |x: &[f64]| band_energy(x, TONE_BAND_HZ.0, TONE_BAND_HZ.1, 16000.0);
    let kw_band = |x: &[f64]| band_energy(x, KEYWORD_BAND_HZ.0, KEYWORD_BAND_HZ.1, 16000.0);
    let attenuation_db = db(tone_band(&omni_n[steady.clone()]) / tone_band(&anc_n[steady]));
    let kw_omni: Vec<f64> = (onset..n).map(|t| omni_k[t] - omni_n[t]).collect();
    let kw_anc: Vec<f64> = (onset..n).map(|t| anc_k[t] - anc_n[t]).collect();
    AncMeasure {
        attenuation_db,
        keyword_delta_db: db(kw_band(&kw_anc) / kw_band(&kw_omni)),
        keyword_onset_s: onset_s,
    }
}

// ---------------------------------------------------------------------------
// Brute-force metric matchers

use mckws::eval::cache::{CachedUtterance, ConfidenceTable};
use mckws::eval::metrics::EvalCorpus;

/// (detected positives, false alarms) by checking every event against every
/// clip independently.
pub fn brute_score(corpus: &EvalCorpus, events: &[Vec<f64>], window: f64) -> (usize, usize) {
    let mut detected = 0;
    let mut fas = 0;
    for (clip, ev) in corpus.clips.iter().zip(events) {
        match clip.span_s {
            Some((s, e)) => {
                let mut hit = false;
                for &t in ev {
                    let dist = if t < s { s - t } else if t > e { t - e } else { 0.0 };
                    if dist <= window {
                        hit = true;
                    }
                }
                detected += hit as usize;
            }
            None => fas += ev.len(),
        }
    }
    (detected, fas)
}

/// (misses, false alarms) of an OR-ensemble, counted naively.
pub fn brute_operating(table: &ConfidenceTable, thresholds: &[f64]) -> (usize, usize) {
    let mut misses = 0;
    let mut fas = 0;
    for u in &table.utterances {
        let mut fires = false;
        for c in 0..thresholds.len() {
            if f64::from(u.confidences[c]) > thresholds[c] {
                fires = true;
            }
        }
        if u.positive && !fires {
            misses += 1;
        }
        if !u.positive && fires {
            fas += 1;
        }
    }
    (misses, fas)
}

/// Smallest threshold `k/1000` whose FA/h meets the target, scanning all k.
pub fn brute_calibrate(table: &ConfidenceTable, target_fah: f64) -> Option<f64> {
    let hours = table.negative_hours();
    (1..1000)
        .map(|k| k as f64 / 1000.0)
        .find(|&t| brute_operating(table, &[t]).1 as f64 / hours <= target_fah)
}

/// Exhaustive grid enumeration: fewest misses among feasible vectors, ties
/// going to the lexicographically larger vector.
pub fn brute_grid(table: &ConfidenceTable, target_fah: f64, steps: usize) -> Option<(Vec<f64>, usize)> {
    let c = table.channels.len();
    let hours = table.negative_hours();
    let mut best: Option<(Vec<usize>, usize)> = None;
    let total = (steps - 1).pow(c as u32);
    for code in 0..total {
        let mut rem = code;
        let mut k = vec![0; c];
        for slot in k.iter_mut().rev() {
            *slot = rem % (steps - 1) + 1;
            rem /= steps - 1;
        }
        let th: Vec<f64> = k.iter().map(|&ki| ki as f64 / steps as f64).collect();
        let (misses, fas) = brute_operating(table, &th);
        if fas as f64 / hours > target_fah {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((bk, bm)) => misses < *bm || (misses == *bm && k > *bk),
        };
        if replace {
            best = Some((k, misses));
        }
    }
    best.map(|(k, m)| (k.iter().map(|&ki| ki as f64 / steps as f64).collect(), m))
}

/// Table from `(positive, confidences)` rows; negatives last `seconds_per_negative`.
pub fn table_of(rows: &[(bool, Vec<f32>)], seconds_per_negative: f64) -> ConfidenceTable {
    let c = rows.first().map_or(1, |r| r.1.len());
    let mut t = ConfidenceTable::new((0..c).map(|i| format!("ch{i}")).collect());
    for (i, (p, conf)) in rows.iter().enumerate() {
        t.push(CachedUtterance {
            id: format!("u{i:03}"),
            positive: *p,
            duration_s: if *p { 2.0 } else { seconds_per_negative },
            confidences: conf.clone(),
        })
        .unwrap();
    }
    t
}
