mod common;

use lsm_core::nn::{
    backward, build_cnn1d, build_cnn2d, build_vit, forward, logit, mean_loss, predict_batch, train, Adam, Checkpoint,
    Dataset, ModelSpec, NnError, Tensor, TrainConfig, VIT_DIM,
};
use lsm_core::util::rng;
use rand::seq::index::sample;
use rand::Rng;

#[test]
fn gradients_match_finite_differences() {
    for (name, spec) in common::gradcheck_specs() {
        spec.validate().unwrap();
        for k in 0..5 {
            let (w, x, y) = common::random_point(&spec, k);
            let err = common::gradcheck(&spec, &w, &x, y, 1e-4);
            assert!(err < 1e-4, "{name} point {k}: relative error {err:e}");
        }
    }
}

#[test]
fn default_architectures_pass_gradient_check() {
    let specs = [
        build_cnn1d(4, 1),
        build_cnn2d(3, 3, 2, 1).unwrap(),
        build_vit(2, 2, 2, 1),
    ];
    for spec in specs {
        let (w, x, y) = common::random_point(&spec, 7);
        let w: Vec<f64> = w.iter().map(|v| v * 0.3).collect();
        let mut idx = sample(&mut rng(11), w.len(), 400.min(w.len())).into_vec();
        idx.extend([0, w.len() - 1]);
        let err = common::gradcheck_at(&spec, &w, &x, y, 1e-4, &idx);
        assert!(err < 1e-4, "{}: relative error {err:e}", spec.arch);
    }
}

#[test]
fn bce_gradient_matches_closed_form() {
    let (_, spec) = common::gradcheck_specs().pop().unwrap();
    let w = vec![0.3, -0.7, 0.1];
    let x = Tensor::new(vec![1, 1, 2], vec![1.5, 0.5]);
    let p = forward(&spec, &w, &x).unwrap();
    let (_, g) = backward(&spec, &w, &x, 1).unwrap();
    let r = p - 1.0;
    for (a, b) in g.iter().zip([r * 1.5, r * 0.5, r]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_optimum_of_convex_toy() {
    let (_, spec) = common::gradcheck_specs().pop().unwrap();
    // single sample, label 1 at logit 0 has gradient -0.5 * x; pair it with label 0
    let x = Tensor::new(vec![1, 1, 2], vec![1.0, -2.0]);
    let w = vec![0.0, 0.0, 0.0];
    let (_, g1) = backward(&spec, &w, &x, 1).unwrap();
    let (_, g0) = backward(&spec, &w, &x, 0).unwrap();
    for (a, b) in g1.iter().zip(&g0) {
        assert!((a + b).abs() < 1e-10);
    }
}

#[test]
fn hand_dense_forward() {
    let (_, spec) = common::gradcheck_specs().pop().unwrap();
    let x = Tensor::new(vec![1, 1, 2], vec![3.0, 1.0]);
    let p = forward(&spec, &[1.0, -1.0, 0.0], &x).unwrap();
    assert!((p - 0.880_797_077_977_882_3).abs() < 1e-12);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let spec = build_cnn1d(14, 0);
    let w = spec.init_weights();
    let err = forward(&spec, &w, &Tensor::zeros(vec![13])).unwrap_err();
    match err {
        NnError::ShapeMismatch { expected, actual } => {
            assert_eq!(expected, vec![14]);
            assert_eq!(actual, vec![13]);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn builder_shapes() {
    let c1 = build_cnn1d(64, 0);
    assert_eq!(c1.input_shape, vec![64]);
    c1.validate().unwrap();
    let c2 = build_cnn2d(11, 11, 14, 0).unwrap();
    let shapes = c2.shapes().unwrap();
    assert_eq!((shapes[0].h, shapes[0].w, shapes[0].c), (11, 11, 32));
    assert_eq!((shapes[2].h, shapes[2].w, shapes[2].c), (5, 5, 64));
    assert!(build_cnn2d(11, 11, 64, 0).unwrap().validate().is_ok());
    assert!(build_cnn2d(2, 2, 3, 0).is_err());
    let vit = build_vit(11, 11, 14, 0);
    let tokens = vit.shapes().unwrap()[2];
    assert_eq!(tokens.h * tokens.w, 122);
}

fn vit_pe_offset(p: usize) -> usize {
    p * VIT_DIM + VIT_DIM
}

#[test]
fn vit_is_equivariant_to_joint_pixel_permutation() {
    let (h, w, p) = (3, 3, 2);
    let spec = build_vit(h, w, p, 11);
    let mut weights = spec.init_weights();
    let mut r = rng(5);
    let off = vit_pe_offset(p);
    for v in &mut weights[off..off + h * w * VIT_DIM] {
        *v = r.random_range(-0.5..0.5);
    }
    let x: Vec<f64> = (0..h * w * p).map(|_| r.random_range(-1.0..1.0)).collect();
    let base = logit(&spec, &weights, &Tensor::new(vec![h, w, p], x.clone())).unwrap();

    let perm = [4usize, 0, 8, 2, 6, 1, 3, 7, 5];
    let mut xp = vec![0.0; x.len()];
    let mut wp = weights.clone();
    for (t, &src) in perm.iter().enumerate() {
        xp[t * p..(t + 1) * p].copy_from_slice(&x[src * p..(src + 1) * p]);
        wp[off + t * VIT_DIM..off + (t + 1) * VIT_DIM]
            .copy_from_slice(&weights[off + src * VIT_DIM..off + (src + 1) * VIT_DIM]);
    }
    let moved = logit(&spec, &wp, &Tensor::new(vec![h, w, p], xp.clone())).unwrap();
    assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");

    // moving pixels alone changes the logit
    let pixels_only = logit(&spec, &weights, &Tensor::new(vec![h, w, p], xp)).unwrap();
    assert!((base - pixels_only).abs() > 1e-9);
}

#[test]
fn all_architectures_learn_separable_toy() {
    let cfg = TrainConfig::default();
    let cases: Vec<(ModelSpec, usize)> = vec![
        (build_cnn1d(2, 1), 0),
        (build_cnn2d(3, 3, 2, 1).unwrap(), 3),
        (build_vit(3, 3, 2, 1), 3),
    ];
    for (spec, window) in cases {
        let (tr, va) = common::separable(window, 99);
        let out = train(&spec, &tr, &va, &cfg).unwrap();
        assert!(out.history.len() <= 100);
        let acc = lsm_core::nn::accuracy(&spec, &out.weights, &va).unwrap();
        assert!(acc >= 0.99, "{} validation accuracy {acc}", spec.arch);
    }
}

#[test]
fn convex_probe_loss_is_nonincreasing() {
    let (_, spec) = common::gradcheck_specs().pop().unwrap();
    let (tr, _) = common::separable(0, 3);
    let data = Dataset {
        inputs: tr.inputs.iter().map(|t| Tensor::new(vec![1, 1, 2], t.data.clone())).collect(),
        labels: tr.labels.clone(),
    };
    let cfg = TrainConfig::default();
    let mut w = spec.init_weights();
    let mut adam = Adam::new(&cfg, w.len());
    let mut prev = mean_loss(&spec, &w, &data).unwrap();
    for step in 0..10 {
        let mut g = vec![0.0; w.len()];
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            lsm_core::nn::accumulate_gradient(&spec, &w, x, y, 1.0 / data.len() as f64, &mut g).unwrap();
        }
        adam.step(&mut w, &g);
        let loss = mean_loss(&spec, &w, &data).unwrap();
        assert!(loss <= prev, "step {step}: {loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn training_is_deterministic_and_zero_epochs_keeps_init() {
    let spec = build_cnn1d(2, 4);
    let (tr, va) = common::separable(0, 8);
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let a = train(&spec, &tr, &va, &cfg).unwrap();
    let b = train(&spec, &tr, &va, &cfg).unwrap();
    assert_eq!(a, b);
    let zero = train(&spec, &tr, &va, &TrainConfig { epochs: 0, ..cfg }).unwrap();
    assert_eq!(zero.weights, spec.init_weights());
    assert_eq!(zero.best_epoch, 0);
}

#[test]
fn predict_batch_matches_single_calls() {
    let spec = build_cnn2d(3, 3, 2, 6).unwrap();
    let w = spec.init_weights();
    let mut r = rng(12);
    let inputs: Vec<Tensor> = (0..50)
        .map(|_| Tensor::new(vec![3, 3, 2], (0..18).map(|_| r.random_range(-1.0..1.0)).collect()))
        .collect();
    let batch = predict_batch(&spec, &w, &inputs).unwrap();
    for (x, b) in inputs.iter().zip(&batch) {
        assert!((forward(&spec, &w, x).unwrap() - b).abs() < 1e-12);
    }
    assert!(predict_batch(&spec, &w, &[]).unwrap().is_empty());
}

fn checkpoint() -> Checkpoint {
    let spec = build_vit(3, 3, 2, 2);
    let (tr, va) = common::separable(3, 1);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&spec, &tr, &va, &cfg).unwrap();
    Checkpoint {
        spec,
        standardizer: None,
        pca_ref: None,
        train_config: cfg,
        weights: out.weights,
        history: out.history,
        best_epoch: out.best_epoch,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint();
    let base = dir.path().join("model");
    ck.save(&base).unwrap();
    let back = Checkpoint::load(&base).unwrap();
    assert_eq!(back, ck);
    let (_, va) = common::separable(3, 2);
    for x in &va.inputs {
        assert_eq!(ck.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
    }
    let header: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.with_extension("json")).unwrap()).unwrap();
    let bin_len = std::fs::metadata(base.with_extension("bin")).unwrap().len() as usize;
    assert_eq!(header["weight_count"].as_u64().unwrap() as usize, (bin_len - 5) / 4);
    assert_eq!((bin_len - 5) / 4, ck.spec.param_count());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint();
    let base = dir.path().join("model");
    ck.save(&base).unwrap();
    let bin_path = base.with_extension("bin");
    let bin = std::fs::read(&bin_path).unwrap();

    std::fs::write(&bin_path, &bin[..bin.len() - 8]).unwrap();
    assert!(matches!(Checkpoint::load(&base), Err(NnError::WeightCount { .. })));

    let mut bad = bin.clone();
    bad[0] = b'X';
    std::fs::write(&bin_path, &bad).unwrap();
    assert!(matches!(Checkpoint::load(&base), Err(NnError::Corrupt(_))));
}
