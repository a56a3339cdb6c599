use super::*;
use ndarray::{arr1, arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fv(v: &[f32]) -> FeatureVector {
    FeatureVector(v.to_vec())
}

/// Mean squared reconstruction loss computed from the forward pass only.
fn loss_via_forward(mlp: &Mlp<f64>, batch: &Array2<f64>) -> f64 {
    let out = mlp.forward_batch(batch.view()).unwrap();
    (&out - batch).mapv(|r| r * r).sum() / batch.len() as f64
}

/// Central differences on every parameter.
fn finite_difference(mlp: &Mlp<f64>, batch: &Array2<f64>, h: f64) -> Vec<f64> {
    let base = mlp.to_flat();
    let mut probe = mlp.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat(&p).unwrap();
            let up = loss_via_forward(&probe, batch);
            p[i] = base[i] - h;
            probe.set_flat(&p).unwrap();
            let down = loss_via_forward(&probe, batch);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn zero_network_outputs_zero() {
    let mlp = Mlp::<f32>::zeros(&defaults_sizes(), Activation::Relu).unwrap();
    let model = MlpModel::new(mlp).unwrap();
    let out = forward(&model, &FeatureVector(vec![0.7; 384])).unwrap();
    assert_eq!(out.len(), 384);
    assert!(out.0.iter().all(|&v| v == 0.0));
}

fn defaults_sizes() -> Vec<usize> {
    crate::defaults::layer_sizes()
}

#[test]
fn toy_network_by_hand() {
    // z1 = W1 (1, -1) + b1 = (1 - 2 + 0.5, 3 + 1 - 0.5) = (-0.5, 3.5)
    // relu -> (0, 3.5); out = W2 (0, 3.5) + b2 = (3.5 + 0.1, -3.5)
    let mlp = Mlp::from_parts(
        &[2, 2, 2],
        vec![arr2(&[[1.0f32, 2.0], [3.0, -1.0]]), arr2(&[[1.0, 1.0], [2.0, -1.0]])],
        vec![arr1(&[0.5, -0.5]), arr1(&[0.1, 0.0])],
        Activation::Relu,
    )
    .unwrap();
    let model = MlpModel::new(mlp).unwrap();
    let out = forward(&model, &fv(&[1.0, -1.0])).unwrap();
    assert_eq!(out.0, vec![3.6, -3.5]);
    assert_eq!(forward(&model, &fv(&[1.0, -1.0])).unwrap(), out);
    assert!(matches!(
        forward(&model, &fv(&[1.0, -1.0, 0.0])),
        Err(ModelError::Dimension { expected: 2, found: 3 })
    ));
}

#[test]
fn loss_examples() {
    let ones = FeatureVector(vec![1.0; 384]);
    let zeros = FeatureVector(vec![0.0; 384]);
    assert_eq!(reconstruction_loss(&ones, &ones).unwrap(), 0.0);
    assert_eq!(reconstruction_loss(&ones, &zeros).unwrap(), 1.0);
    assert!(matches!(
        reconstruction_loss(&ones, &fv(&[1.0])),
        Err(ModelError::Dimension { .. })
    ));
}

#[test]
fn loss_symmetric_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = FeatureVector((0..16).map(|_| rng.random_range(-3.0..3.0)).collect());
        let b = FeatureVector((0..16).map(|_| rng.random_range(-3.0..3.0)).collect());
        let ab = reconstruction_loss(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, reconstruction_loss(&b, &a).unwrap());
    }
}

#[test]
fn stationary_point_has_zero_gradient() {
    let eye = || Array2::<f64>::eye(4);
    let mlp = Mlp::from_parts(
        &[4, 4, 4],
        vec![eye(), eye()],
        vec![Array1::zeros(4), Array1::zeros(4)],
        Activation::Identity,
    )
    .unwrap();
    let batch = arr2(&[[1.0, -2.0, 0.5, 3.0], [0.0, 0.25, -1.0, 2.0]]);
    let (loss, g) = mlp.loss_and_gradients(batch.view()).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.to_flat().iter().all(|v| v.abs() < 1e-12));
}

use ndarray::Array1;

/// Random net whose hidden pre-activations stay clear of the ReLU kink, so
/// central differences see a smooth function.
fn random_smooth_case(rng: &mut ChaCha8Rng, sizes: &[usize]) -> (Mlp<f64>, Array2<f64>) {
    loop {
        let mut mlp = Mlp::<f64>::random(sizes, Activation::Relu, rng).unwrap();
        for b in mlp.biases_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let batch = Array2::from_shape_fn((5, sizes[0]), |_| rng.random_range(-1.0..1.0));
        let clear = batch.rows().into_iter().all(|row| {
            let x: Vec<f64> = row.to_vec();
            mlp.hidden_preactivations(&x)
                .unwrap()
                .iter()
                .flatten()
                .all(|z| z.abs() > 1e-3)
        });
        if clear {
            return (mlp, batch);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let (mlp, batch) = random_smooth_case(&mut rng, &[4, 3, 2, 3, 4]);
        let analytic = gradients(&mlp, batch.view()).unwrap().to_flat();
        let numeric = finite_difference(&mlp, &batch, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn linear_network_gradient_scaling() {
    // Linear net, zero biases: doubling the input doubles every residual and
    // every activation, so output weight gradients scale by exactly 4 and
    // output bias gradients by 2.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mlp = Mlp::<f64>::random(&[4, 3, 2, 3, 4], Activation::Identity, &mut rng).unwrap();
    for b in mlp.biases_mut() {
        b.fill(0.0);
    }
    let batch = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
    let g1 = gradients(&mlp, batch.view()).unwrap();
    let g2 = gradients(&mlp, (&batch * 2.0).view()).unwrap();
    let last = g1.weights.len() - 1;
    for (a, b) in g1.weights[last].iter().zip(g2.weights[last].iter()) {
        assert!((4.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    for (a, b) in g1.biases[last].iter().zip(g2.biases[last].iter()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    // and the linear gradients themselves agree with finite differences
    let numeric = finite_difference(&mlp, &batch, 1e-5);
    for (a, n) in g1.to_flat().iter().zip(&numeric) {
        assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4);
    }
}

fn gaussian_cluster(rng: &mut ChaCha8Rng, mean: &[f32], sigma: f32, n: usize) -> Vec<FeatureVector> {
    let noise = Normal::new(0.0f32, sigma).unwrap();
    (0..n)
        .map(|_| FeatureVector(mean.iter().map(|m| m + noise.sample(rng)).collect()))
        .collect()
}

#[test]
fn overfits_a_single_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = FeatureVector((0..384).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(&[v], &cfg).unwrap();
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 1e-3, "final loss {last}");
}

#[test]
fn training_is_deterministic_and_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mean: Vec<f32> = (0..384).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = gaussian_cluster(&mut rng, &mean, 0.1, 500);
    let cfg = TrainConfig {
        epochs: 10,
        seed: 42,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    let h = &a.history;
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    assert!(h.iter().all(|e| e.val_loss.is_some()));
    assert_eq!(a.model.metadata["train_samples"], "450");
}

#[test]
fn sgd_and_standardization_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mean: Vec<f32> = (0..8).map(|i| i as f32).collect();
    let data = gaussian_cluster(&mut rng, &mean, 0.5, 64);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        optimizer: Optimizer::Sgd,
        learning_rate: 0.01,
        standardize: true,
        hidden_layers: vec![6, 4, 6],
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let h = &out.history;
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    let norm = out.model.normalizer.as_ref().unwrap();
    assert!((norm.mean[3] - 3.0).abs() < 0.3);
    // reconstructions come back in the input space
    let rec = forward(&out.model, &data[0]).unwrap();
    assert!(rec.0.iter().zip(&mean).all(|(r, m)| (r - m).abs() < 2.0));
}

#[test]
fn training_rejects_bad_input() {
    assert!(matches!(train(&[], &TrainConfig::default()), Err(ModelError::EmptyDataset)));
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&[fv(&[1.0])], &bad), Err(ModelError::InvalidConfig(_))));
    let exploding = TrainConfig {
        learning_rate: 1e30,
        optimizer: Optimizer::Sgd,
        epochs: 50,
        hidden_layers: vec![4],
        ..TrainConfig::default()
    };
    let data = vec![fv(&[1e3, -1e3, 5e2]); 4];
    assert!(matches!(train(&data, &exploding), Err(ModelError::NonFiniteLoss { .. })));
}

#[test]
fn model_file_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = gaussian_cluster(&mut rng, &[0.5; 384], 0.1, 20);
    let cfg = TrainConfig {
        epochs: 2,
        standardize: true,
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    save_model(&model, &p).unwrap();
    let back = load_model(&p).unwrap();
    assert_eq!(back, model);
    let a = forward(&model, &data[3]).unwrap();
    let b = forward(&back, &data[3]).unwrap();
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn model_file_errors() {
    let mlp = Mlp::<f32>::zeros(&[3, 2, 3], Activation::Relu).unwrap();
    let model = MlpModel::new(mlp).unwrap();
    let good = io::model_to_bytes(&model);

    let mut corrupted = good.clone();
    corrupted[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(io::model_from_bytes(&corrupted), Err(ModelError::Version(99))));

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"JUNK");
    assert!(matches!(io::model_from_bytes(&magic), Err(ModelError::BadMagic)));

    // sizes [3, 2, 4] do not map the space back onto itself
    let mut chain = good.clone();
    chain[24..28].copy_from_slice(&4u32.to_le_bytes());
    assert!(matches!(io::model_from_bytes(&chain), Err(ModelError::Shape(_))));

    assert!(matches!(
        io::model_from_bytes(&good[..good.len() - 10]),
        Err(ModelError::Truncated)
    ));
    assert!(MlpModel::new(Mlp::<f32>::zeros(&[3, 2], Activation::Relu).unwrap()).is_err());
}

#[test]
fn shape_chain_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sizes = defaults_sizes();
    let mlp = Mlp::<f32>::random(&sizes, Activation::Relu, &mut rng).unwrap();
    for (k, w) in mlp.weights().iter().enumerate() {
        assert_eq!(w.dim(), (sizes[k + 1], sizes[k]));
    }
    assert_eq!(sizes, vec![384, 256, 128, 64, 32, 64, 128, 256, 384]);
}
