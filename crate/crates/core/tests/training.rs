//! Embedder forward/training behavior: normalization, PK sampling, loss
//! descent, determinism.

use partcc_core::embedder::{
    forward, sample_pk_batch, train, train_logged, EmbedderParams, TrainerConfig,
};
use partcc_core::pseudolabel::SplitState;
use partcc_core::rng::Rng;
use partcc_core::synth::{generate, split_labeled, SynthConfig};
use partcc_core::Matrix;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn forward_outputs_are_unit_per_part() {
    let mut rng = Rng::new(1);
    let params = EmbedderParams::init(3, 8, 4, 99);
    let data: Vec<f64> = (0..10 * 8).map(|_| rng.next_gauss()).collect();
    let features = Matrix::from_vec(10, 8, data).unwrap();
    let t = forward(&params, &features).unwrap();
    for i in 0..10 {
        for q in 0..3 {
            assert!((norm(t.part(i, q)) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_with_selector_weights_is_identity_on_unit_slices() {
    // raw = concatenation of Q unit part vectors; W_q selects slice q.
    let (q_parts, d) = (2, 3);
    let raw_dim = q_parts * d;
    let mut flat = vec![0.0; q_parts * raw_dim * d + q_parts * d];
    for q in 0..q_parts {
        for c in 0..d {
            let r = q * d + c;
            flat[q * raw_dim * d + r * d + c] = 1.0;
        }
    }
    let params = EmbedderParams::from_flat(q_parts, raw_dim, d, flat, 0).unwrap();
    let mut rng = Rng::new(5);
    let mut feature_row = vec![0.0; raw_dim];
    for q in 0..q_parts {
        let slice = &mut feature_row[q * d..(q + 1) * d];
        for v in slice.iter_mut() {
            *v = rng.next_gauss();
        }
        let n = norm(slice);
        for v in slice.iter_mut() {
            *v /= n;
        }
    }
    let features = Matrix::from_vec(1, raw_dim, feature_row.clone()).unwrap();
    let t = forward(&params, &features).unwrap();
    for (a, b) in t.item_row(0).iter().zip(feature_row.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn forward_matches_straight_line_reimplementation() {
    let (q_parts, raw_dim, d) = (3, 5, 2);
    let params = EmbedderParams::init(q_parts, raw_dim, d, 17);
    let mut rng = Rng::new(23);
    let data: Vec<f64> = (0..4 * raw_dim).map(|_| rng.next_gauss()).collect();
    let features = Matrix::from_vec(4, raw_dim, data.clone()).unwrap();
    let t = forward(&params, &features).unwrap();
    for i in 0..4 {
        let x = &data[i * raw_dim..(i + 1) * raw_dim];
        for q in 0..q_parts {
            let w = params.weight_block(q);
            let b = params.bias_block(q);
            let mut v: Vec<f64> = b.to_vec();
            for (r, &xr) in x.iter().enumerate() {
                for c in 0..d {
                    v[c] += xr * w[r * d + c];
                }
            }
            let n = norm(&v);
            for (c, out) in v.iter().enumerate() {
                assert!((out / n - t.part(i, q)[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_rejects_degenerate_pre_normalization() {
    // All-zero weights and biases make every output degenerate.
    let params = EmbedderParams::from_flat(1, 2, 2, vec![0.0; 6], 0).unwrap();
    let features = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
    let err = forward(&params, &features).unwrap_err();
    assert!(matches!(
        err,
        partcc_core::Error::DegenerateEmbedding { item: 0, part: 0, .. }
    ));
}

#[test]
fn pk_batch_from_labeled_only_when_no_pseudo() {
    let labeled: Vec<(usize, u32)> = (0..12).map(|i| (i, (i / 3) as u32)).collect();
    let split = SplitState::new(labeled, (12..20).collect()).unwrap();
    let mut rng = Rng::new(3);
    let (items, labels) = sample_pk_batch(&split, 3, 2, &mut rng).unwrap();
    assert_eq!(items.len(), 6);
    for &item in &items {
        assert!(item < 12);
    }
    for &l in &labels {
        assert!(l < 4);
    }
}

#[test]
fn pk_batch_resamples_short_identities() {
    // Identity 1 has a single image; with k=2 it must be sampled twice.
    let split = SplitState::new(vec![(0, 0), (1, 0), (2, 1)], vec![]).unwrap();
    let mut rng = Rng::new(9);
    let (items, labels) = sample_pk_batch(&split, 2, 2, &mut rng).unwrap();
    assert_eq!(items.len(), 4);
    let ones: Vec<usize> = items
        .iter()
        .zip(labels.iter())
        .filter(|&(_, &l)| l == 1)
        .map(|(&i, _)| i)
        .collect();
    assert_eq!(ones, vec![2, 2]);
}

#[test]
fn pk_batch_default_shape() {
    let labeled: Vec<(usize, u32)> = (0..150).map(|i| (i, (i / 6) as u32)).collect();
    let split = SplitState::new(labeled, vec![]).unwrap();
    let mut rng = Rng::new(4);
    let (items, _) = sample_pk_batch(&split, 20, 6, &mut rng).unwrap();
    assert_eq!(items.len(), 120);
}

#[test]
fn pk_batch_splits_between_labeled_and_pseudo() {
    let labeled: Vec<(usize, u32)> = (0..40).map(|i| (i, (i / 4) as u32)).collect();
    let split = SplitState::new(labeled, (40..80).collect()).unwrap();
    let pseudo: Vec<(usize, u32)> = (40..80).map(|i| (i, 10 + ((i - 40) / 4) as u32)).collect();
    let split = split.replace_pseudo(pseudo).unwrap();
    let mut rng = Rng::new(6);
    let (items, labels) = sample_pk_batch(&split, 8, 2, &mut rng).unwrap();
    assert_eq!(items.len(), 16);
    let n_pseudo_instances = labels.iter().filter(|&&l| l >= 10).count();
    assert_eq!(n_pseudo_instances, 8);
}

#[test]
fn pk_batch_needs_two_identities() {
    let split = SplitState::new(vec![(0, 0), (1, 0)], vec![]).unwrap();
    let mut rng = Rng::new(2);
    assert!(matches!(
        sample_pk_batch(&split, 2, 2, &mut rng),
        Err(partcc_core::Error::TooFewIdentities { found: 1 })
    ));
}

fn small_zero_noise() -> (SynthConfig, Matrix, SplitState) {
    let config = SynthConfig {
        n_identities: 8,
        images_per_identity: 6,
        n_parts: 3,
        dim: 8,
        noise_sigma: 0.0,
        part_confusion: 0.0,
        raw_dim: 32,
        seed: 31,
    };
    let out = generate(&config).unwrap();
    let split = split_labeled(&out.labels, 1.0, 31).unwrap();
    (config, out.raw_features, split)
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let (config, features, split) = small_zero_noise();
    let params = EmbedderParams::init(config.n_parts, config.raw_dim, config.dim, 7);
    let before = params.clone();
    let tcfg = TrainerConfig {
        epochs: 0,
        batch_p: 4,
        batch_k: 2,
        ..TrainerConfig::default()
    };
    let after = train(params, &split, &features, &tcfg).unwrap();
    assert_eq!(before, after);
}

#[test]
fn training_loss_descends_on_zero_noise_data() {
    // Final loss below initial loss in at least 19 of 20 seeds.
    let mut descents = 0;
    for seed in 0..20u64 {
        let config = SynthConfig {
            n_identities: 8,
            images_per_identity: 6,
            n_parts: 3,
            dim: 8,
            noise_sigma: 0.0,
            part_confusion: 0.0,
            raw_dim: 32,
            seed,
        };
        let out = generate(&config).unwrap();
        let split = split_labeled(&out.labels, 1.0, seed).unwrap();
        let params = EmbedderParams::init(config.n_parts, config.raw_dim, config.dim, seed);
        let tcfg = TrainerConfig {
            epochs: 20,
            batch_p: 8,
            batch_k: 4,
            seed,
            ..TrainerConfig::default()
        };
        let (_, trace) = train_logged(params, &split, &out.raw_features, &tcfg).unwrap();
        if trace.last().unwrap().total < trace.first().unwrap().total {
            descents += 1;
        }
    }
    assert!(descents >= 19, "loss descended in only {descents}/20 seeds");
}

#[test]
fn training_is_bit_deterministic() {
    let (config, features, split) = small_zero_noise();
    let tcfg = TrainerConfig {
        epochs: 5,
        batch_p: 4,
        batch_k: 2,
        seed: 12,
        ..TrainerConfig::default()
    };
    let run = || {
        let params = EmbedderParams::init(config.n_parts, config.raw_dim, config.dim, 7);
        train(params, &split, &features, &tcfg).unwrap()
    };
    let a = run();
    let b = run();
    let bits = |p: &EmbedderParams| -> Vec<u64> { p.flat().iter().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn training_errors_on_empty_labeled_set() {
    let (config, features, _) = small_zero_noise();
    let split = SplitState::new(vec![], (0..10).collect()).unwrap();
    let params = EmbedderParams::init(config.n_parts, config.raw_dim, config.dim, 7);
    assert!(matches!(
        train(params, &split, &features, &TrainerConfig::default()),
        Err(partcc_core::Error::EmptyLabeledSet)
    ));
}
