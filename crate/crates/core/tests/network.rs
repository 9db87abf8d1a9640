//! Detector network: fusion properties, streaming against the training
//! graph, checkpoints, gradients and event detection.

mod common;

use mckws::bench::preset_detector;
use mckws::dsp::FeatureMatrix;
use mckws::eval::compare::Approach;
use mckws::net::attention::fuse_frames;
use mckws::net::detect::{detect_events, EventConfig, StreamingDetector};
use mckws::net::presets::{self, Scale};
use mckws::net::{checkpoint, KwsNetwork};
use mckws::train::graph;
use mckws::train::loss_and_logit_grad;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(seed: u64, frames: usize, tag: &str) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fm = FeatureMatrix::new(frames, 40, tag);
    fm.data.iter_mut().for_each(|v| *v = rng.random_range(-12.0..2.0));
    fm
}

fn attention_net(seed: u64) -> KwsNetwork<f32> {
    preset_detector(Approach::AttentionAnc, Scale::Desk, seed).unwrap().remove(0).network
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_a_convex_combination(
        c in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let logits: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| rng.random_range(-30.0..30.0)).collect()).collect();
        let frames: Vec<Vec<f64>> = (0..c).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let l: Vec<&[f64]> = logits.iter().map(Vec::as_slice).collect();
        let z: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        let f = fuse_frames(&l, &z).unwrap();
        for j in 0..d {
            let total: f64 = (0..c).map(|i| f.weight(i, j)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((0..c).all(|i| f.weight(i, j) >= 0.0));
            let lo = z.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = z.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f.z_star[j] >= lo - 1e-12 && f.z_star[j] <= hi + 1e-12);
            let direct: f64 = (0..c).map(|i| f.weight(i, j) * z[i][j]).sum();
            prop_assert!((f.z_star[j] - direct).abs() < 1e-9);
        }
        // reordering channels only reorders the weights
        let lr: Vec<&[f64]> = l.iter().rev().copied().collect();
        let zr: Vec<&[f64]> = z.iter().rev().copied().collect();
        let g = fuse_frames(&lr, &zr).unwrap();
        for j in 0..d {
            prop_assert!((f.z_star[j] - g.z_star[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn streaming_matches_the_training_graph(seed in 0u64..1000, frames in 1usize..60) {
        let net = attention_net(seed);
        let chans = vec![features(seed, frames, "omni"), features(seed + 1, frames, "anc")];
        let stream = net.posteriors(&chans).unwrap();
        let batch = graph::forward(&net.cast(), &chans).unwrap().posteriors;
        for (s, b) in stream.iter().zip(&batch) {
            prop_assert!((*s as f64 - b).abs() < 1e-4, "{s} vs {b}");
        }
    }

    #[test]
    fn streaming_detector_matches_batch(posteriors in prop::collection::vec(0.0f32..1.0, 0..400), thr in 0.05f32..0.95) {
        let cfg = EventConfig { window: 10, refractory: 25 };
        let batch = detect_events(&posteriors, thr, cfg).unwrap();
        let mut det = StreamingDetector::new(thr, cfg).unwrap();
        let mut stream: Vec<_> = posteriors.iter().filter_map(|&p| det.push(p)).collect();
        stream.extend(det.finish());
        prop_assert_eq!(&stream, &batch);
        prop_assert!(batch.windows(2).all(|w| w[1].frame >= w[0].frame + 25));
        prop_assert!(batch.iter().all(|e| e.confidence > thr));
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, approach) in [Approach::Base, Approach::AttentionAnc, Approach::BaseX2].into_iter().enumerate() {
        let net = preset_detector(approach, Scale::Desk, 5 + i as u64).unwrap().remove(0).network;
        let path = dir.path().join(format!("{i}.ckpt"));
        checkpoint::save(&path, &net).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(back.param_count(), net.param_count());
        for (a, b) in net.tensors().iter().zip(back.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let chans = [features(9, 50, "omni"), features(10, 50, "anc")];
        let n = if net.is_attention() { 2 } else { 1 };
        assert_eq!(net.posteriors(&chans[..n]).unwrap(), back.posteriors(&chans[..n]).unwrap());
        checkpoint::save(&dir.path().join("again.ckpt"), &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.ckpt")).unwrap());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let net = attention_net(1);
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&mut bytes, &net).unwrap();
    assert!(checkpoint::read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(checkpoint::read_checkpoint(&mut bad.as_slice()).is_err());
}

#[test]
fn duplicate_channels_carry_no_keys_gradient() {
    let net = common::grad_check_net(3);
    let single = KwsNetwork::new("omni", net.normalizer.clone(), None, net.body.clone()).unwrap();
    let frames = 25;
    let x = &common::random_inputs(8, 1, frames)[0];
    let targets: Vec<u8> = (0..frames).map(|t| u8::from((10..18).contains(&t))).collect();

    let dup = graph::forward_normalized(&net, vec![x.clone(); 3], frames).unwrap();
    let one = graph::forward_normalized(&single, vec![x.clone()], frames).unwrap();
    assert_eq!(dup.posteriors, one.posteriors);
    let (_, d_dup) = loss_and_logit_grad(&dup.posteriors, &targets, true, 0.5).unwrap();
    let (_, d_one) = loss_and_logit_grad(&one.posteriors, &targets, true, 0.5).unwrap();
    let g_dup = graph::backward(&net, &dup, &d_dup).unwrap();
    let g_one = graph::backward(&single, &one, &d_one).unwrap();

    assert_eq!(g_dup.keys_by_channel.len(), 3);
    for g in &g_dup.keys_by_channel {
        for t in g.tensors() {
            assert!(t.iter().all(|v| v.abs() < 1e-12));
        }
    }
    for (a, b) in g_dup.body.tensors().iter().zip(g_one.body.tensors()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn saturated_negative_has_near_zero_gradient() {
    let mut net = common::grad_check_net(4);
    // push every output logit far negative through the last bias
    let last = net.body.tensors_mut().pop().unwrap();
    last.iter_mut().for_each(|b| *b = -14.0);
    let frames = 30;
    let z = common::random_inputs(2, 2, frames);
    let cache = graph::forward_normalized(&net, z, frames).unwrap();
    assert!(cache.posteriors.iter().all(|&p| p < 1e-4));
    let (_, d) = loss_and_logit_grad(&cache.posteriors, &vec![0; frames], false, 0.5).unwrap();
    let g = graph::backward(&net, &cache, &d).unwrap();
    let mut acc = graph::zeros_like(&net);
    g.accumulate_into(&mut acc);
    let norm: f64 = acc.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "{norm}");
}

#[test]
fn gradient_check_on_a_small_input() {
    let r = common::gradient_check(21, 2, 12, 1e-6);
    assert!(r.max_rel_err < 1e-4, "{} at {}", r.max_rel_err, r.worst);
    assert!(r.kinked * 20 < r.params, "{} of {} kinked", r.kinked, r.params);
}

#[test]
fn preset_parameter_counts() {
    let base = presets::count_params(&presets::base_specs(Scale::Paper));
    let keys = presets::count_params(&presets::keys_specs(Scale::Paper));
    assert!((712_500..=787_500).contains(&base));
    assert!((47_500..=52_500).contains(&keys));
    let net = preset_detector(Approach::AttentionAnc, Scale::Paper, 1).unwrap().remove(0).network;
    assert_eq!(net.param_count(), base + keys);
    let desk_base = presets::count_params(&presets::base_specs(Scale::Desk));
    let desk_keys = presets::count_params(&presets::keys_specs(Scale::Desk));
    let ratio = desk_base as f64 / desk_keys as f64;
    let paper_ratio = base as f64 / keys as f64;
    assert!((ratio / paper_ratio - 1.0).abs() < 0.2, "{ratio} vs {paper_ratio}");
}
