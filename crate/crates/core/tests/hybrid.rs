use std::f64::consts::PI;
use std::path::PathBuf;

use qtransfer::audiodata::Utterance;
use qtransfer::classicalnn::{ConvBlockConfig, Mode, Tensor};
use qtransfer::hybrid::*;
use qtransfer::noisesim::NoiseSpec;
use qtransfer::vqc::VqcConfig;
use qtransfer::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn waveforms(batch: usize, time: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * time).map(|_| rng.random_range(-0.5..0.5)).collect();
    Tensor::new(vec![batch, 1, time], data).unwrap()
}

fn tone(freq: f64, len: usize, label: usize) -> Utterance {
    Utterance {
        samples: (0..len).map(|t| 0.5 * (2.0 * PI * freq * t as f64 / 8000.0).sin()).collect(),
        sample_rate: 8000,
        label,
        source_path: PathBuf::new(),
    }
}

fn small_config(n_classes: usize) -> HybridConfig {
    HybridConfig {
        conv_blocks: vec![
            ConvBlockConfig {
                in_channels: 1,
                out_channels: 8,
                kernel: 16,
                stride: 8,
                pool: 4,
            },
            ConvBlockConfig {
                in_channels: 8,
                out_channels: 16,
                kernel: 3,
                stride: 1,
                pool: 4,
            },
        ],
        dnn_hidden: vec![16, 16],
        n_classes,
        vqc: VqcConfig::new(4, 2),
    }
}

fn bits(model: &HybridModel) -> Vec<(String, Vec<u64>)> {
    model
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.data.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn seeded_build_is_bit_identical() {
    let cfg = HybridConfig::default();
    let a = build_model(ModelKind::CnnQnn, &cfg, 7).unwrap();
    let b = build_model(ModelKind::CnnQnn, &cfg, 7).unwrap();
    assert_eq!(bits(&a), bits(&b));
    let c = build_model(ModelKind::CnnQnn, &cfg, 8).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn default_parameter_counts() {
    let cfg = HybridConfig::default();
    let q = build_model(ModelKind::CnnQnn, &cfg, 0).unwrap();
    assert_eq!(q.vqc_param_count(), 96);
    assert_eq!(q.cnn().param_count(), 33952);
    // cnn + compressor (64*8 + 8) + angles
    assert_eq!(q.trainable_param_count(), 33952 + 520 + 96);
    // plus the fixed 8 x 35 class matrix
    assert_eq!(q.total_param_count(), 33952 + 520 + 96 + 280);

    let d = build_model(ModelKind::CnnDnn, &cfg, 0).unwrap();
    let Head::Dnn(layers) = d.head() else { panic!("expected a DNN head") };
    let mut widths = vec![layers[0].inputs()];
    widths.extend(layers.iter().map(|l| l.outputs()));
    assert_eq!(widths, vec![64, 128, 256, 512, 35]);
    assert_eq!(d.trainable_param_count(), 33952 + 190883);

    let q2 = transfer_cnn(&d, cfg.vqc, TrainRegime::CnnQnn2, 1).unwrap();
    assert_eq!(q2.trainable_param_count(), 96);
    let q3 = transfer_cnn(&d, cfg.vqc, TrainRegime::CnnQnn3, 1).unwrap();
    assert_eq!(q3.trainable_param_count(), 96 + 33952 + 520);
}

#[test]
fn class_matrix_shape_and_scale() {
    let cfg = HybridConfig::default();
    let q = build_model(ModelKind::CnnQnn, &cfg, 3).unwrap();
    let Head::Qnn(head) = q.head() else { panic!("expected a quantum head") };
    let m = head.class_matrix();
    assert_eq!(m.shape(), &[8, 35]);
    let var = m.data().iter().map(|v| v * v).sum::<f64>() / m.len() as f64;
    // N(0, 1/8) entries
    assert!((var - 0.125).abs() < 0.03, "variance {var}");
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = HybridConfig {
        n_classes: 1,
        ..Default::default()
    };
    assert!(matches!(build_model(ModelKind::CnnDnn, &cfg, 0), Err(Error::InvalidArgument(_))));
    let mut cfg = HybridConfig::default();
    cfg.conv_blocks[1].in_channels = 5;
    assert!(build_model(ModelKind::CnnQnn, &cfg, 0).is_err());
    let mut cfg = HybridConfig::default();
    cfg.vqc.n_wires = 0;
    assert!(build_model(ModelKind::CnnQnn, &cfg, 0).is_err());
}

#[test]
fn logits_shape_and_row_independence() {
    let cfg = small_config(35);
    for kind in [ModelKind::CnnDnn, ModelKind::CnnQnn] {
        let mut m = build_model(kind, &cfg, 2).unwrap();
        let mut x = waveforms(3, 400, 5);
        let copy: Vec<f64> = x.data()[..400].to_vec();
        x.data_mut()[800..].copy_from_slice(&copy);
        let logits = m.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(logits.shape(), &[3, 35]);
        assert_eq!(&logits.data()[..35], &logits.data()[70..]);
    }
    let mut m = build_model(ModelKind::CnnDnn, &cfg, 2).unwrap();
    let empty = Tensor::zeros(vec![0, 1, 400]);
    assert!(m.forward(&empty, Mode::Eval, None).is_err());
}

#[test]
fn noise_is_rejected_for_classical_head() {
    let mut m = build_model(ModelKind::CnnDnn, &small_config(4), 0).unwrap();
    let noise = NoiseSpec::depolarizing(0.01).unwrap();
    let err = m.forward(&waveforms(1, 400, 0), Mode::Eval, Some(&noise)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn zero_noise_matches_noiseless_forward() {
    let mut m = build_model(ModelKind::CnnQnn, &HybridConfig::default(), 4).unwrap();
    let x = waveforms(2, 8000, 9);
    let clean = m.forward(&x, Mode::Eval, None).unwrap();
    for spec in ["depolarizing:0", "bit-flip:0", "phase-flip:0"] {
        let noise: NoiseSpec = spec.parse().unwrap();
        let noisy = m.forward(&x, Mode::Eval, Some(&noise)).unwrap();
        for (a, b) in clean.data().iter().zip(noisy.data()) {
            assert!((a - b).abs() < 1e-7, "{spec}: {a} vs {b}");
        }
    }
}

#[test]
fn transfer_copies_the_feature_extractor() {
    let cfg = small_config(4);
    let mut src = build_model(ModelKind::CnnDnn, &cfg, 11).unwrap();
    // move the running statistics away from their initial values
    src.forward(&waveforms(4, 400, 1), Mode::Train, None).unwrap();
    src.clear_cache();
    for regime in [TrainRegime::CnnQnn2, TrainRegime::CnnQnn3] {
        let mut dst = transfer_cnn(&src, cfg.vqc, regime, 12).unwrap();
        let cnn_bits = |m: &HybridModel| -> Vec<(String, Vec<u64>)> {
            bits(m).into_iter().filter(|(n, _)| n.starts_with("cnn.")).collect()
        };
        assert_eq!(cnn_bits(&src), cnn_bits(&dst));
        let x = waveforms(3, 400, 2);
        let mut s = src.clone();
        let a = s.extract_features(&x, Mode::Eval).unwrap();
        let b = dst.extract_features(&x, Mode::Eval).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
        assert_eq!(dst.kind(), ModelKind::CnnQnn);
        let t = dst.trainable();
        assert_eq!(t.cnn, regime == TrainRegime::CnnQnn3);
        assert_eq!(t.compressor, regime == TrainRegime::CnnQnn3);
        assert!(t.vqc);
    }

    let qnn = build_model(ModelKind::CnnQnn, &cfg, 0).unwrap();
    assert!(transfer_cnn(&qnn, cfg.vqc, TrainRegime::CnnQnn2, 0).is_err());
    assert!(transfer_cnn(&src, cfg.vqc, TrainRegime::BaselineCnnDnn, 0).is_err());
    assert!(prepare_model(TrainRegime::CnnQnn2, &cfg, 0, None).is_err());
    let mut other = small_config(4);
    other.conv_blocks[0].kernel = 8;
    assert!(matches!(
        prepare_model(TrainRegime::CnnQnn3, &other, 0, Some(&src)),
        Err(Error::InvalidArgument(_))
    ));
    assert!(prepare_model(TrainRegime::CnnQnn3, &cfg, 0, Some(&src)).is_ok());
}

fn toy_set(n_per_class: usize, freqs: &[f64], len: usize) -> Vec<Utterance> {
    let mut out = Vec::new();
    for i in 0..n_per_class {
        for (label, f) in freqs.iter().enumerate() {
            out.push(tone(f * (1.0 + 0.01 * i as f64), len, label));
        }
    }
    out
}

#[test]
fn frozen_tensors_do_not_move() {
    let cfg = small_config(2);
    let data = toy_set(4, &[300.0, 1500.0], 400);
    let src = build_model(ModelKind::CnnDnn, &cfg, 1).unwrap();
    let model = transfer_cnn(&src, cfg.vqc, TrainRegime::CnnQnn2, 2).unwrap();
    let before = bits(&model);
    let opts = TrainOptions {
        epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    let out = train(model, &data, &data, &opts, |_| {}).unwrap();
    let after = bits(&out.best);
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if name == "qnn.vqc.angles" {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b, "{name} changed");
        }
    }
}

#[test]
fn untrained_model_is_at_chance() {
    let freqs: Vec<f64> = (0..35).map(|k| 250.0 * 1.08f64.powi(k)).collect();
    let data = toy_set(4, &freqs, 4000);
    for kind in [ModelKind::CnnDnn, ModelKind::CnnQnn] {
        let mut m = build_model(kind, &HybridConfig::default(), 5).unwrap();
        let r = evaluate(&mut m, &data, 64, None).unwrap();
        assert_eq!(r.sample_count, 140);
        assert!((r.accuracy - 1.0 / 35.0).abs() <= 0.05, "{kind:?} accuracy {}", r.accuracy);
        // Random logits with variance s^2 push the expected CE to about
        // ln K + s^2 / 2; the fixed class matrix gives s^2 up to ~1.
        assert!((r.cross_entropy - 35f64.ln()).abs() < 0.5, "{kind:?} CE {}", r.cross_entropy);
    }
}

#[test]
fn two_tone_sanity() {
    let data = toy_set(8, &[300.0, 1800.0], 800);
    let model = build_model(ModelKind::CnnQnn, &small_config(2), 3).unwrap();
    let opts = TrainOptions {
        epochs: 50,
        batch_size: data.len(),
        ..Default::default()
    };
    let out = train(model, &data, &data, &opts, |_| {}).unwrap();
    let ce: Vec<f64> = out.history.iter().map(|r| r.train_ce.unwrap()).collect();
    assert!(ce.windows(2).all(|w| w[1] < w[0]), "{ce:?}");
    let last = out.history.last().unwrap();
    assert!(last.val.accuracy >= 0.95, "accuracy {}", last.val.accuracy);
}

#[test]
fn zero_epochs_only_evaluates() {
    let data = toy_set(2, &[300.0, 1800.0], 400);
    let model = build_model(ModelKind::CnnDnn, &small_config(2), 3).unwrap();
    let before = bits(&model);
    let opts = TrainOptions {
        epochs: 0,
        ..Default::default()
    };
    let mut seen = 0;
    let out = train(model, &data, &data, &opts, |_| seen += 1).unwrap();
    assert_eq!(seen, 1);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].epoch, 0);
    assert!(out.history[0].train_ce.is_none());
    assert_eq!(bits(&out.best), before);
}

#[test]
fn non_finite_loss_reports_its_location() {
    let mut data = toy_set(3, &[300.0, 1800.0], 400);
    data[5].samples[10] = f64::NAN;
    let model = build_model(ModelKind::CnnDnn, &small_config(2), 3).unwrap();
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 2,
        ..Default::default()
    };
    match train(model, &data, &data[..2], &opts, |_| {}) {
        Err(Error::Numeric { location }) => assert!(location.starts_with("epoch 1, batch "), "{location}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn evaluate_rejects_empty_split() {
    let mut m = build_model(ModelKind::CnnDnn, &small_config(2), 3).unwrap();
    assert!(matches!(evaluate(&mut m, &[], 4, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn container_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(3);
    let src = build_model(ModelKind::CnnDnn, &cfg, 1).unwrap();
    for model in [
        src.clone(),
        transfer_cnn(&src, cfg.vqc, TrainRegime::CnnQnn2, 4).unwrap(),
    ] {
        let path = dir.path().join(format!("{}.safetensors", model.kind().name()));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back.kind(), model.kind());
        assert_eq!(back.config(), model.config());
        assert_eq!(back.seed(), model.seed());
        assert_eq!(back.trainable(), model.trainable());
        assert_eq!(model_to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
    }

    let path = dir.path().join("cut.safetensors");
    let bytes = model_to_bytes(&src).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    assert!(matches!(load_model(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn regime_names_round_trip() {
    for r in TrainRegime::ALL {
        assert_eq!(r.name().parse::<TrainRegime>().unwrap(), r);
        assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.name()));
    }
    assert!("cnn_qnn_4".parse::<TrainRegime>().is_err());
    assert_eq!(TrainRegime::BaselineCnnDnn.default_epochs(), 30);
    assert_eq!(TrainRegime::CnnQnn2.default_epochs(), 15);
}
