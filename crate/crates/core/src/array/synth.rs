//! Parametric audio: formant-style keyword and confuser phrases and a set of
//! named noise generators. Everything is a pure function of its arguments
//! and seed.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SAMPLE_RATE};

const SR: f64 = SAMPLE_RATE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoicePreset {
    Male,
    Female,
    Child,
}

impl VoicePreset {
    pub const ALL: [VoicePreset; 3] = [VoicePreset::Male, VoicePreset::Female, VoicePreset::Child];

    fn pitch_hz(self) -> f64 {
        match self {
            VoicePreset::Male => 115.0,
            VoicePreset::Female => 205.0,
            VoicePreset::Child => 290.0,
        }
    }

    fn formant_scale(self) -> f64 {
        match self {
            VoicePreset::Male => 1.0,
            VoicePreset::Female => 1.12,
            VoicePreset::Child => 1.24,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VoicePreset::Male => "male",
            VoicePreset::Female => "female",
            VoicePreset::Child => "child",
        }
    }
}

impl FromStr for VoicePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(VoicePreset::Male),
            "female" => Ok(VoicePreset::Female),
            "child" => Ok(VoicePreset::Child),
            other => Err(Error::Config(format!("unknown voice preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    White,
    Pink,
    Brown,
    Babble,
    Tones,
    Kitchen,
    Street,
    Vacuum,
    Tv,
}

impl NoiseType {
    pub const ALL: [NoiseType; 9] = [
        NoiseType::White,
        NoiseType::Pink,
        NoiseType::Brown,
        NoiseType::Babble,
        NoiseType::Tones,
        NoiseType::Kitchen,
        NoiseType::Street,
        NoiseType::Vacuum,
        NoiseType::Tv,
    ];

    /// The six noise conditions of the acoustic lab protocol.
    pub const LAB: [NoiseType; 6] = [
        NoiseType::Kitchen,
        NoiseType::Street,
        NoiseType::Vacuum,
        NoiseType::White,
        NoiseType::Pink,
        NoiseType::Tv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseType::White => "white",
            NoiseType::Pink => "pink",
            NoiseType::Brown => "brown",
            NoiseType::Babble => "babble",
            NoiseType::Tones => "tones",
            NoiseType::Kitchen => "kitchen",
            NoiseType::Street => "street",
            NoiseType::Vacuum => "vacuum",
            NoiseType::Tv => "tv",
        }
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise type `{s}`")))
    }
}

/// Vowel-like segment targets (first three formants, Hz).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vowel {
    A,
    E,
    I,
    O,
    U,
    Ae,
}

impl Vowel {
    pub const ALL: [Vowel; 6] = [Vowel::A, Vowel::E, Vowel::I, Vowel::O, Vowel::U, Vowel::Ae];

    fn formants(self) -> [f64; 3] {
        match self {
            Vowel::A => [730.0, 1090.0, 2440.0],
            Vowel::E => [530.0, 1840.0, 2480.0],
            Vowel::I => [270.0, 2290.0, 3010.0],
            Vowel::O => [570.0, 840.0, 2410.0],
            Vowel::U => [300.0, 870.0, 2240.0],
            Vowel::Ae => [660.0, 1720.0, 2410.0],
        }
    }
}

/// Segment sequence of the activation phrase.
pub const KEYWORD: [Vowel; 3] = [Vowel::E, Vowel::A, Vowel::I];
/// Pitch contour of the activation phrase: (start, end) multipliers per segment.
const KEYWORD_CONTOUR: [(f64, f64); 3] = [(1.0, 1.18), (1.18, 1.05), (1.05, 0.82)];

const SEGMENT_S: f64 = 0.2;
const GLIDE_S: f64 = 0.03;
const FADE_S: f64 = 0.02;

fn raised_cosine(x: f64) -> f64 {
    0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos()
}

/// Harmonic source shaped by three resonances per segment, with gliding
/// formants at segment boundaries and a pitch chirp inside each segment.
fn synth_phrase(vowels: &[Vowel], contour: &[(f64, f64)], preset: VoicePreset, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f0 = preset.pitch_hz() * rng.random_range(0.92..1.08);
    let fscale = preset.formant_scale() * rng.random_range(0.96..1.04);
    let durations: Vec<usize> = vowels
        .iter()
        .map(|_| (SEGMENT_S * rng.random_range(0.85..1.15) * SR) as usize)
        .collect();
    let total: usize = durations.iter().sum();
    let glide = (GLIDE_S * SR) as usize;
    let fade = (FADE_S * SR) as usize;
    let bandwidths = [90.0, 110.0, 150.0];
    let gains = [1.0, 0.55, 0.3];

    let mut out = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    let mut prev_formants = vowels[0].formants().map(|f| f * fscale);
    for (s, (&vowel, &len)) in vowels.iter().zip(&durations).enumerate() {
        let target = vowel.formants().map(|f| f * fscale);
        let (c0, c1) = contour[s];
        for i in 0..len {
            let x = i as f64 / len as f64;
            let pitch = f0 * (c0 + (c1 - c0) * x);
            let g = if i < glide { i as f64 / glide as f64 } else { 1.0 };
            let formants: [f64; 3] = std::array::from_fn(|k| prev_formants[k] + (target[k] - prev_formants[k]) * g);
            phase += 2.0 * PI * pitch / SR;
            let mut v = 0.0;
            let mut h = 1.0;
            while h * pitch < 6500.0 {
                let f = h * pitch;
                let mut amp = 0.02;
                for k in 0..3 {
                    let d = (f - formants[k]) / bandwidths[k];
                    amp += gains[k] / (1.0 + d * d);
                }
                v += amp * (h * phase).sin();
                h += 1.0;
            }
            // slight dip between segments
            let edge = (i.min(len - 1 - i) as f64 / (0.015 * SR)).min(1.0);
            v *= 0.85 + 0.15 * edge;
            out.push(v);
        }
        prev_formants = target;
    }
    let n = out.len();
    for (i, v) in out.iter_mut().enumerate() {
        let env = raised_cosine(i as f64 / fade as f64) * raised_cosine((n - 1 - i) as f64 / fade as f64);
        *v *= env;
    }
    peak_normalize(out)
}

fn peak_normalize(x: Vec<f64>) -> Vec<f32> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return x.into_iter().map(|v| v as f32).collect();
    }
    x.into_iter().map(|v| (v / peak) as f32).collect()
}

/// The activation phrase spoken by `preset`.
pub fn synth_keyword(preset: VoicePreset, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_phrase(&KEYWORD, &KEYWORD_CONTOUR, preset, &mut rng)
}

/// A speech-like phrase that is not the keyword. Half of the confusers are
/// near misses that share two of the three keyword segments.
pub fn synth_confuser(preset: VoicePreset, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0f0);
    confuser_with(preset, &mut rng)
}

fn confuser_with(preset: VoicePreset, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let vowels: Vec<Vowel> = loop {
        let v: Vec<Vowel> = if rng.random_bool(0.5) {
            let mut v = KEYWORD.to_vec();
            let pos = rng.random_range(0..3);
            if rng.random_bool(0.5) {
                v[pos] = Vowel::ALL[rng.random_range(0..Vowel::ALL.len())];
            } else {
                v.swap(pos, (pos + 1) % 3);
            }
            v
        } else {
            let len = rng.random_range(2..=4);
            (0..len).map(|_| Vowel::ALL[rng.random_range(0..Vowel::ALL.len())]).collect()
        };
        if v != KEYWORD {
            break v;
        }
    };
    let contour: Vec<(f64, f64)> = vowels
        .iter()
        .map(|_| (rng.random_range(0.85..1.2), rng.random_range(0.85..1.2)))
        .collect();
    synth_phrase(&vowels, &contour, preset, rng)
}

/// Gaussian noise shaped in the frequency domain by `gain(f_hz)`.
fn shaped_noise(rng: &mut ChaCha8Rng, n: usize, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * SR / n as f64;
        *c *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    shaped_noise(rng, n, |f| if f < 1.0 { 0.0 } else { 1.0 / f.max(20.0).sqrt() })
}

fn brown(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    shaped_noise(rng, n, |f| if f < 1.0 { 0.0 } else { 1.0 / f.max(20.0) })
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn add_scaled(dst: &mut [f64], src: &[f64], level: f64) {
    let g = level / rms(src).max(1e-12);
    for (d, s) in dst.iter_mut().zip(src) {
        *d += g * s;
    }
}

fn babble(rng: &mut ChaCha8Rng, n: usize, talkers: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..talkers {
        let preset = VoicePreset::ALL[rng.random_range(0..3)];
        let mut pos = rng.random_range(0..(SR as usize / 2));
        while pos < n {
            let phrase = confuser_with(preset, rng);
            let gain = rng.random_range(0.5..1.0);
            for (i, &s) in phrase.iter().enumerate() {
                if pos + i < n {
                    out[pos + i] += gain * s as f64;
                }
            }
            pos += phrase.len() + rng.random_range(0..(SR as usize / 4));
        }
    }
    out
}

fn am_tones(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(300.0..3000.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.3..0.8),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            tones
                .iter()
                .map(|&(f, rate, depth, ph)| (1.0 - depth * (0.5 + 0.5 * (2.0 * PI * rate * t + ph).sin())) * (2.0 * PI * f * t + ph).sin())
                .sum()
        })
        .collect()
}

fn clatter(rng: &mut ChaCha8Rng, n: usize, rate_hz: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut t = 0usize;
    loop {
        let gap: f64 = -rng.random_range(1e-6f64..1.0).ln() / rate_hz;
        t += (gap * SR) as usize + 1;
        if t >= n {
            break;
        }
        let f = rng.random_range(2000.0..6000.0);
        let decay = rng.random_range(0.02..0.06);
        let amp = rng.random_range(0.3..1.0);
        for i in 0..((decay * 5.0 * SR) as usize).min(n - t) {
            let tt = i as f64 / SR;
            out[t + i] += amp * (-tt / decay).exp() * (2.0 * PI * f * tt).sin();
        }
    }
    out
}

/// Mono noise of `duration_s` seconds, peak-normalized.
pub fn synth_noise(kind: NoiseType, duration_s: f64, seed: u64) -> Result<Vec<f32>> {
    if !(duration_s > 0.0) {
        return Err(Error::Config(format!("noise duration must be positive, got {duration_s}")));
    }
    let n = (duration_s * SR).round() as usize;
    if n == 0 {
        return Err(Error::Config("noise duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = match kind {
        NoiseType::White => white(&mut rng, n),
        NoiseType::Pink => pink(&mut rng, n),
        NoiseType::Brown => brown(&mut rng, n),
        NoiseType::Babble => babble(&mut rng, n, 6),
        NoiseType::Tones => am_tones(&mut rng, n, 3),
        NoiseType::Kitchen => {
            let mut x = vec![0.0; n];
            add_scaled(&mut x, &pink(&mut rng, n), 0.3);
            add_scaled(&mut x, &clatter(&mut rng, n, 4.0), 1.0);
            x
        }
        NoiseType::Street => {
            let mut x = vec![0.0; n];
            add_scaled(&mut x, &brown(&mut rng, n), 1.0);
            let swell_rate = rng.random_range(0.1..0.4);
            let band = shaped_noise(&mut rng, n, |f| if (200.0..2500.0).contains(&f) { 1.0 } else { 0.05 });
            let swelled: Vec<f64> = band
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (0.6 + 0.4 * (2.0 * PI * swell_rate * i as f64 / SR).sin()))
                .collect();
            add_scaled(&mut x, &swelled, 0.6);
            x
        }
        NoiseType::Vacuum => {
            let f0 = rng.random_range(140.0..220.0);
            let hum: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / SR;
                    (1..=12).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum()
                })
                .collect();
            let whine = shaped_noise(&mut rng, n, |f| if (1000.0..4000.0).contains(&f) { 1.0 } else { 0.15 });
            let mut x = vec![0.0; n];
            add_scaled(&mut x, &hum, 0.7);
            add_scaled(&mut x, &whine, 1.0);
            x
        }
        NoiseType::Tv => {
            let mut x = vec![0.0; n];
            add_scaled(&mut x, &babble(&mut rng, n, 2), 1.0);
            let chord_len = (0.5 * SR) as usize;
            let mut music = vec![0.0; n];
            let mut start = 0;
            while start < n {
                let base = rng.random_range(200.0..500.0);
                let freqs = [base, base * 1.26, base * 1.5];
                for i in start..(start + chord_len).min(n) {
                    let t = i as f64 / SR;
                    music[i] = freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum();
                }
                start += chord_len;
            }
            add_scaled(&mut x, &music, 0.5);
            x
        }
    };
    Ok(peak_normalize(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_is_deterministic_and_normalized() {
        for p in VoicePreset::ALL {
            let a = synth_keyword(p, 11);
            let b = synth_keyword(p, 11);
            assert_eq!(a, b);
            let peak = a.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-6);
            // three segments of roughly 0.2 s
            assert!(a.len() > 8000 && a.len() < 11500, "{}", a.len());
        }
        assert_ne!(synth_keyword(VoicePreset::Male, 1), synth_keyword(VoicePreset::Child, 1));
        assert_ne!(synth_keyword(VoicePreset::Male, 1), synth_keyword(VoicePreset::Male, 2));
    }

    #[test]
    fn noise_lengths_and_errors() {
        for kind in NoiseType::ALL {
            let x = synth_noise(kind, 0.5, 3).unwrap();
            assert_eq!(x.len(), 8000);
            assert!(x.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            assert_eq!(x, synth_noise(kind, 0.5, 3).unwrap());
        }
        assert!(matches!(synth_noise(NoiseType::White, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!("hairdryer".parse::<NoiseType>(), Err(Error::Config(_))));
        assert!(matches!("robot".parse::<VoicePreset>(), Err(Error::Config(_))));
    }
}
