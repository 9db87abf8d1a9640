//! Training loop behaviour on a small synthesized corpus.

use std::sync::OnceLock;

use mckws::array::corpus::CorpusSpec;
use mckws::dsp::{ChannelKind, ChannelMode};
use mckws::net::presets::{base_specs, keys_specs, Scale};
use mckws::net::KwsNetwork;
use mckws::pipeline::{generate_training_set, load_training_set, Layout, Recipe};
use mckws::train::graph;
use mckws::train::trainer::{
    evaluate_loss, finetune_attention, finetune_channel, loss_and_logit_grad, train_base, TrainConfig,
};
use mckws::train::UtteranceBatch;
use proptest::prelude::*;

struct Fixture {
    _dir: tempfile::TempDir,
    omni: UtteranceBatch,
    omni_anc: UtteranceBatch,
    base: KwsNetwork<f32>,
    base_log: Vec<f64>,
}

fn cfg(epochs: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate,
        ..TrainConfig::default()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        // clean keywords and no confuser speech
        let recipe = Recipe {
            train: CorpusSpec {
                positives: 100,
                negatives: 100,
                snr_db: [10.0, 20.0],
                pre_speech_prob: 0.0,
                confusers_per_s: 0.0,
                ..CorpusSpec::default()
            },
            ..Recipe::default()
        };
        let layout = Layout::new(dir.path());
        generate_training_set(&recipe, &layout).unwrap();
        let omni = load_training_set(&recipe, &layout, &[ChannelKind::Omni]).unwrap();
        let omni_anc = load_training_set(&recipe, &layout, &ChannelMode::OmniAnc.channels()).unwrap();
        let out = train_base(&omni, &base_specs(Scale::Desk), &TrainConfig { batch_size: 8, ..cfg(10, 2e-3) }).unwrap();
        Fixture {
            _dir: dir,
            omni,
            omni_anc,
            base_log: out.log.iter().map(|e| e.total).collect(),
            base: out.network,
        }
    })
}

fn loss(net: &KwsNetwork<f32>, data: &UtteranceBatch) -> f64 {
    evaluate_loss(&net.cast(), data, &TrainConfig::default()).unwrap().total(0.5)
}

#[test]
fn base_training_fits_a_small_corpus() {
    let f = fixture();
    assert_eq!(f.omni.len(), 200);
    let first = f.base_log[0];
    let last = *f.base_log.last().unwrap();
    assert!(last < 0.2, "final loss {last}, log {:?}", f.base_log);
    assert!(last < 0.5 * first, "{:?}", f.base_log);
    assert!((loss(&f.base, &f.omni) - last).abs() < 0.1);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let f = fixture();
    let small = UtteranceBatch::new(f.omni.channel_tags.clone(), f.omni.utterances[80..120].to_vec()).unwrap();
    let a = train_base(&small, &base_specs(Scale::Desk), &cfg(2, 3e-3)).unwrap();
    let b = train_base(&small, &base_specs(Scale::Desk), &cfg(2, 3e-3)).unwrap();
    for (x, y) in a.network.tensors().iter().zip(b.network.tensors()) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let c = train_base(&small, &base_specs(Scale::Desk), &TrainConfig { seed: 2, ..cfg(2, 3e-3) }).unwrap();
    assert_ne!(a.network.tensors(), c.network.tensors());
}

#[test]
fn fine_tuning_on_the_same_channel_does_not_hurt() {
    let f = fixture();
    let before = loss(&f.base, &f.omni);
    let tuned = finetune_channel(&f.base, &f.omni, ChannelKind::Omni, &cfg(2, 2e-4)).unwrap();
    let after = loss(&tuned.network, &f.omni);
    assert!(after <= before + 1e-3, "{before} -> {after}");
}

#[test]
fn attention_starts_as_a_uniform_average() {
    let f = fixture();
    let net = finetune_attention(&f.base, &f.omni_anc, ChannelMode::OmniAnc, &keys_specs(Scale::Desk), &cfg(0, 1e-3))
        .unwrap()
        .network;
    let utt = &f.omni_anc.utterances[3];
    let cache = graph::forward(&net.cast(), &utt.channels).unwrap();
    assert_eq!(cache.alpha.len(), cache.frames * 2 * cache.dim);
    assert!(cache.alpha.iter().all(|&a| a == 0.5));
    // the body sees the mean of the two normalized channels
    for (i, z) in cache.z_star.iter().enumerate() {
        assert!((z - 0.5 * (cache.z[0][i] + cache.z[1][i])).abs() < 1e-12);
    }
}

#[test]
fn attention_fine_tuning_lowers_the_loss() {
    let f = fixture();
    let out = finetune_attention(&f.base, &f.omni_anc, ChannelMode::OmniAnc, &keys_specs(Scale::Desk), &cfg(3, 1e-3))
        .unwrap();
    let totals: Vec<f64> = out.log.iter().map(|e| e.total).collect();
    assert!(totals[2] < totals[0], "{totals:?}");
    let keys_moved = out.network.keys.as_ref().unwrap().tensors().last().unwrap().iter().any(|&v| v != 0.0);
    assert!(keys_moved);
}

#[test]
fn mismatched_channels_are_rejected() {
    let f = fixture();
    assert!(finetune_channel(&f.base, &f.omni, ChannelKind::Anc, &cfg(1, 1e-3)).is_err());
    assert!(finetune_attention(&f.base, &f.omni, ChannelMode::OmniAnc, &keys_specs(Scale::Desk), &cfg(1, 1e-3)).is_err());
    assert!(train_base(&f.omni_anc, &base_specs(Scale::Desk), &cfg(1, 1e-3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn without_max_pool_the_gradient_is_plain_cross_entropy(
        p in prop::collection::vec(0.001f64..0.999, 1..80),
        seed in any::<u64>(),
        positive in any::<bool>(),
    ) {
        let targets: Vec<u8> = p.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as u8).collect();
        let (parts, d) = loss_and_logit_grad(&p, &targets, positive, 0.0).unwrap();
        let n = p.len() as f64;
        let ce: f64 = p.iter().zip(&targets).map(|(&q, &y)| if y == 1 { -q.ln() } else { -(1.0 - q).ln() }).sum::<f64>() / n;
        prop_assert!((parts.frame_ce - ce).abs() < 1e-12);
        prop_assert_eq!(parts.total(0.0), parts.frame_ce);
        for ((g, &q), &y) in d.iter().zip(&p).zip(&targets) {
            prop_assert!((g - (q - y as f64) / n).abs() < 1e-12);
        }
    }
}
