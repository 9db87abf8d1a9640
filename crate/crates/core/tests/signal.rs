//! Array simulation and front-end properties checked against independent
//! signal oracles.

mod common;

use mckws::array::synth::{synth_noise, NoiseType};
use mckws::array::{propagate_f64, ArrayGeometry, SourceSpec};
use mckws::dsp::anc::{AncConfig, AncState};
use mckws::dsp::beam::BeamSet;
use mckws::dsp::fracdelay::FractionalDelay;
use mckws::dsp::{featio, log_mel};
use proptest::prelude::*;

const TAU: f64 = std::f64::consts::TAU;

fn sines(freqs: &[f64], shift: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| freqs.iter().map(|f| (TAU * f * (t as f64 - shift) / 16000.0).sin()).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fractional_delay_shifts_band_limited_signals(d in -6.0f64..6.0, f1 in 100.0f64..5000.0, f2 in 100.0f64..5000.0) {
        let x = sines(&[f1, f2], 0.0, 800);
        let y = FractionalDelay::new(d).apply(&x);
        let want = sines(&[f1, f2], d, 800);
        for t in 64..736 {
            prop_assert!((y[t] - want[t]).abs() < 5e-3, "t={t} {} vs {}", y[t], want[t]);
        }
    }

    #[test]
    fn plane_wave_reaches_each_mic_with_geometric_delay(az in 0.0f64..360.0, f in 200.0f64..4000.0) {
        let g = ArrayGeometry::default();
        let n = 1200;
        let wave: Vec<f32> = sines(&[f], 0.0, n).iter().map(|&v| v as f32).collect();
        let mics = propagate_f64(&g, &SourceSpec::new(az, 94.0, wave)).unwrap();
        let gain = mics[0][400] / (TAU * f * 400.0 / 16000.0).sin();
        for (m, ch) in mics.iter().enumerate() {
            // a plane wave from azimuth a reaches mic r after -(r . u) / c
            let (x, y) = (g.mic_positions[m][0], g.mic_positions[m][1]);
            let tau = -(x * az.to_radians().cos() + y * az.to_radians().sin()) / 343.0 * 16000.0;
            let want = sines(&[f], tau, n);
            for t in (100..n - 100).step_by(7) {
                prop_assert!((ch[t] - gain * want[t]).abs() < 5e-3 * gain.abs().max(1e-9), "mic {m} t {t}");
            }
        }
    }

    #[test]
    fn beamformer_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let g = ArrayGeometry::default();
        let beams = BeamSet::six(&g).unwrap();
        let x: Vec<Vec<f64>> = (0..7).map(|m| common::white(seed * 7 + m, 300)).collect();
        let y: Vec<Vec<f64>> = (0..7).map(|m| common::white(seed * 7 + m + 5000, 300)).collect();
        let mix: Vec<Vec<f64>> = x.iter().zip(&y).map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect()).collect();
        let (bx, by, bm) = (beams.apply(&x).unwrap(), beams.apply(&y).unwrap(), beams.apply(&mix).unwrap());
        for k in 0..6 {
            for t in 0..300 {
                let want = a * bx[k][t] + b * by[k][t];
                prop_assert!((bm[k][t] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn feature_dump_round_trips(seed in 0u64..500, len in 400usize..4000) {
        let fm = log_mel(&common::white(seed, len));
        let mut buf = Vec::new();
        featio::write_features(&mut buf, &fm).unwrap();
        prop_assert_eq!(buf.len(), 16 + 4 * fm.data.len());
        let back = featio::read_features(buf.as_slice(), &fm.channel_tag).unwrap();
        prop_assert_eq!(back, fm);
    }
}

#[test]
fn delay_and_sum_array_gain_on_white_noise() {
    let gain = common::array_gain_db(42, 10.0);
    assert!((gain - 10.0 * 7f64.log10()).abs() < 0.5, "{gain}");
}

/// Average PSD over an octave-wide band starting at `lo` Hz.
fn octave(psd: &[f64], lo: f64) -> f64 {
    let bin = 16000.0 / ((psd.len() - 1) * 2) as f64;
    let (a, b) = ((lo / bin) as usize, (2.0 * lo / bin) as usize);
    psd[a..b].iter().sum::<f64>() / (b - a) as f64
}

#[test]
fn noise_spectra_have_the_expected_slopes() {
    // per-octave slope in dB between 250 Hz and 4 kHz
    let slope = |kind| {
        let x: Vec<f64> = synth_noise(kind, 10.0, 3).unwrap().iter().map(|&v| v as f64).collect();
        let psd = common::welch_psd(&x, 1024);
        let bands: Vec<f64> = [250.0, 500.0, 1000.0, 2000.0].iter().map(|&f| common::db(octave(&psd, f))).collect();
        (bands[3] - bands[0]) / 3.0
    };
    let white = slope(NoiseType::White);
    let pink = slope(NoiseType::Pink);
    let brown = slope(NoiseType::Brown);
    assert!(white.abs() < 0.5, "white {white}");
    assert!((pink + 3.0).abs() < 0.75, "pink {pink}");
    assert!((brown + 6.0).abs() < 1.0, "brown {brown}");
}

#[test]
fn anc_cancels_tone_noise_and_keeps_a_late_keyword() {
    for az in [30.0, 135.0, 250.0] {
        let m = common::anc_measure(9, az, 4.5);
        assert!(m.attenuation_db >= 10.0, "{az}: {}", m.attenuation_db);
        assert!(m.keyword_delta_db.abs() <= 1.0, "{az}: {}", m.keyword_delta_db);
    }
}

#[test]
fn applied_coefficients_ignore_the_last_second() {
    // two streams that agree up to t0 and differ afterwards
    let n = 50_000;
    let t0 = 30_000;
    let base = common::white(5, n);
    let refs = (common::white(6, n), common::white(7, n));
    let burst = common::white(8, n);
    let mut a = AncState::new(AncConfig::default()).unwrap();
    let mut b = AncState::new(AncConfig::default()).unwrap();
    let horizon = t0 + 14_400;
    for t in 0..horizon {
        let extra = if t >= t0 { burst[t] } else { 0.0 };
        a.process(base[t], refs.0[t], refs.1[t]);
        b.process(base[t] + extra, refs.0[t] + extra, refs.1[t] - extra);
        let same = a
            .applied_coefficients()
            .iter()
            .zip(b.applied_coefficients())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "applied coefficients diverged at sample {t}");
    }
    assert_ne!(a.coefficients(), b.coefficients());
}

#[test]
fn steered_beam_wins_for_every_protocol_azimuth() {
    let g = ArrayGeometry::default();
    let beams = BeamSet::six(&g).unwrap();
    let wave = synth_noise(NoiseType::Pink, 0.5, 11).unwrap();
    for az in (0..360).step_by(15).map(f64::from) {
        let mics = propagate_f64(&g, &SourceSpec::new(az, 80.0, wave.clone())).unwrap();
        let out = beams.apply(&mics).unwrap();
        let best = (0..6).max_by(|&i, &j| common::power(&out[i]).total_cmp(&common::power(&out[j]))).unwrap();
        let gap = |b: usize| {
            let d = (BeamSet::AZIMUTHS[b] - az).rem_euclid(360.0);
            d.min(360.0 - d)
        };
        let nearest = (0..6).map(gap).fold(f64::INFINITY, f64::min);
        assert!(gap(best) <= nearest + 1e-9, "az {az}: beam {best}");
    }
}
