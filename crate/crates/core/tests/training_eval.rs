mod common;

use std::path::Path;

use stereoqual::conditioning::dual_mono;
use stereoqual::evaluation::{evaluate, EvalOptions};
use stereoqual::model::Tensor4;
use stereoqual::synth::MANIFEST_NAME;
use stereoqual::training::{adam_step, load_pairs, materialize, train, AdamHyper, AdamState, TrainConfig};
use stereoqual::{
    read_manifest, write_manifest, Error, FrontendConfig, InputLayout, Loss, ModelConfig, QualityNet, RatedPair,
    SmoothL1, TensorBuilder,
};

fn tiny_frontend() -> FrontendConfig {
    FrontendConfig {
        num_bands: 8,
        ..FrontendConfig::default()
    }
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        fixed_frames: 16,
        batch_size: 4,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

/// Two short sources through the default conditions: 16 rated pairs.
fn dataset(dir: &Path) -> Vec<RatedPair> {
    common::synthetic_dataset(dir, 2, 0.3, 3)
}

#[test]
fn defaults_give_fifty_epochs_and_reproducible_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dataset(dir.path());
    let pairs = load_pairs::<f32>(&rows, &dir.path().join("data"), false).unwrap();
    let run = || {
        let net = QualityNet::<f32>::build(ModelConfig::tiny(InputLayout::Stereo), 5).unwrap();
        train(net, &pairs, tiny_frontend(), &quick_config()).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.history.epochs.len(), 50);
    assert_eq!(a.history.epochs.last().unwrap().epoch, 49);
    assert_eq!(a.history.rows_per_epoch.len(), 5);
    assert!(a.history.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_mse.is_some()));
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.checkpoint.metadata.epochs, 50);
    assert_eq!(a.checkpoint.metadata.fixed_frames, Some(16));
    let opts = EvalOptions::for_checkpoint(&a.checkpoint, false);
    assert_eq!(opts.min_frames, a.checkpoint.model.min_frames().max(16));

    let other = {
        let net = QualityNet::<f32>::build(ModelConfig::tiny(InputLayout::Stereo), 5).unwrap();
        let cfg = TrainConfig {
            seed: 1,
            ..quick_config()
        };
        train(net, &pairs, tiny_frontend(), &cfg).unwrap()
    };
    assert_ne!(other.history, a.history);
}

#[test]
fn single_fold_trains_on_everything_without_validation() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dataset(dir.path());
    let pairs = load_pairs::<f32>(&rows, &dir.path().join("data"), false).unwrap();
    let net = QualityNet::<f32>::build(ModelConfig::tiny(InputLayout::Stereo), 1).unwrap();
    let cfg = TrainConfig {
        folds: 1,
        epochs_per_fold: 3,
        ..quick_config()
    };
    let out = train(net, &pairs, tiny_frontend(), &cfg).unwrap();
    assert_eq!(out.history.rows_per_epoch, vec![2 * rows.len()]);
    assert!(out.history.epochs.iter().all(|e| e.val_loss.is_none() && e.val_mse.is_none()));
}

#[test]
fn lr_swap_doubles_stereo_rows_and_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dataset(dir.path());
    let pairs = load_pairs::<f64>(&rows, &dir.path().join("data"), false).unwrap();
    let builder = TensorBuilder::<f64>::new(tiny_frontend(), InputLayout::Stereo).unwrap();
    let on = materialize(&pairs, &builder, &quick_config()).unwrap();
    assert_eq!(on.len(), 2 * pairs.len());
    for pair in on.chunks(2) {
        assert_eq!(pair[0].source, pair[1].source);
        assert!(!pair[0].swapped && pair[1].swapped);
        assert_eq!(pair[0].mos, pair[1].mos);
        assert_eq!(pair[0].mos, rows[pair[0].source].mos);
        // swapping L and R exchanges the L and R planes only
        assert_eq!(pair[1].input, pair[0].input.permute_planes(&[2, 3, 0, 1, 4, 5, 6, 7]));
    }

    let mut cfg = quick_config();
    cfg.augmentations.lr_swap = false;
    assert_eq!(materialize(&pairs, &builder, &cfg).unwrap().len(), pairs.len());
}

#[test]
fn small_step_lowers_single_example_loss() {
    let cfg = ModelConfig::tiny(InputLayout::Stereo);
    let mut net = QualityNet::<f64>::build(cfg.clone(), 21).unwrap();
    let x = {
        let ex = common::noise(cfg.in_channels() * cfg.bands * 16, 1, 4).into_channels().remove(0);
        Tensor4::from_vec(1, cfg.in_channels(), cfg.bands, 16, ex).unwrap()
    };
    let target = [0.7];
    let loss = SmoothL1 { beta: 1.0 };
    let mut state = AdamState::new();
    let (before, grads) = net.gradients(&x, &target, &loss).unwrap();
    adam_step(&mut net, &grads, &mut state, 1e-6, &AdamHyper::default()).unwrap();
    let (preds, _) = net.forward_train(&x).unwrap();
    let after = loss.batch_mean(&preds, &target);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn band_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dataset(dir.path());
    let pairs = load_pairs::<f32>(&rows, &dir.path().join("data"), false).unwrap();
    let net = QualityNet::<f32>::build(ModelConfig::tiny(InputLayout::Stereo), 1).unwrap();
    assert!(train(net, &pairs, FrontendConfig::default(), &quick_config()).is_err());
}

#[test]
fn evaluation_of_mono_rows_needs_dual_mono() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dataset(dir.path());
    let data = dir.path().join("data");
    // rewrite the first source as mono files
    let mono_rows: Vec<RatedPair> = rows[..8]
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for p in [&mut r.ref_path, &mut r.cod_path] {
                let audio = stereoqual::load_wav::<f32>(data.join(&*p)).unwrap();
                let mono = stereoqual::AudioExcerpt::mono(audio.channel(0).to_vec(), 48_000).unwrap();
                let rel = p.with_extension("mono.wav");
                stereoqual::audio::write_wav_f32(data.join(&rel), &mono).unwrap();
                *p = rel;
            }
            r
        })
        .collect();
    write_manifest(data.join("mono.jsonl"), &mono_rows).unwrap();
    let manifest = read_manifest(data.join("mono.jsonl")).unwrap();

    let net = QualityNet::<f32>::build(ModelConfig::tiny(InputLayout::Stereo), 2).unwrap();
    let strict = evaluate(&net, tiny_frontend(), &manifest, &data, &EvalOptions::default());
    assert!(matches!(strict, Err(Error::NotStereo(1))), "{strict:?}");

    let opts = EvalOptions {
        dual_mono: true,
        ..EvalOptions::default()
    };
    let report = evaluate(&net, tiny_frontend(), &manifest, &data, &opts).unwrap();
    assert_eq!(report.n, 8);

    // dual-mono scoring matches explicitly widened stereo input
    let builder = stereoqual::evaluation::builder_for(&net, tiny_frontend()).unwrap();
    let r = stereoqual::load_wav::<f32>(data.join(&manifest[3].ref_path)).unwrap();
    let c = stereoqual::load_wav::<f32>(data.join(&manifest[3].cod_path)).unwrap();
    let s = stereoqual::evaluation::score_pair(
        &net,
        &builder,
        &dual_mono(&r).unwrap(),
        &dual_mono(&c).unwrap(),
        100.0,
    )
    .unwrap();
    let row = report.rows.iter().find(|x| x.cod_path == manifest[3].cod_path).unwrap();
    assert_eq!(row.predicted, s.score);
}

#[test]
fn evaluation_is_independent_of_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let data = dir.path().join("data");
    let manifest = read_manifest(data.join(MANIFEST_NAME)).unwrap();
    let net = QualityNet::<f64>::build(ModelConfig::tiny(InputLayout::Stereo), 8).unwrap();
    let a = evaluate(&net, tiny_frontend(), &manifest, &data, &EvalOptions::default()).unwrap();
    let mut shuffled = manifest.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let b = evaluate(&net, tiny_frontend(), &shuffled, &data, &EvalOptions::default()).unwrap();
    assert_eq!((a.rp, a.rs, a.mse), (b.rp, b.rs, b.mse));
    assert_eq!(a.per_group, b.per_group);
    assert_eq!(a.n, 16);
    assert!(a.per_group.contains_key("reference") && a.per_group.contains_key("lowpass"));
}
