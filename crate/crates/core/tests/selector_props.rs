//! Selector network: forward-pass oracle and learning properties.

use genmania::eval::score_chart;
use genmania::features::{FeatureVector, BEAT_OFFSET, FEATURE_WIDTH, INSTRUMENT_OFFSET};
use genmania::instrument::CATEGORY_COUNT;
use genmania::selector::{
    predict_rows, train_on, ClassWeights, DenseLayer, FeatureSet, SelectorModel, TrainConfig, HIDDEN_WIDTHS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, input: usize) -> SelectorModel {
    let mut widths = vec![input];
    widths.extend(HIDDEN_WIDTHS);
    widths.push(2);
    let layers = widths
        .windows(2)
        .map(|w| {
            let weights = (0..w[0] * w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let biases = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            DenseLayer::new(w[0], w[1], weights, biases).unwrap()
        })
        .collect();
    SelectorModel::from_layers(FeatureSet::NO_SUMMARY, layers).unwrap()
}

/// y = W x + b written as explicit matrix rows, ReLU between layers.
fn oracle_forward(model: &SelectorModel, x: &[f64]) -> [f64; 2] {
    let mut a = x.to_vec();
    let n = model.layers().len();
    for (k, l) in model.layers().iter().enumerate() {
        let rows: Vec<&[f64]> = l.weights.chunks(l.inputs).collect();
        a = rows
            .iter()
            .zip(&l.biases)
            .map(|(row, b)| {
                let z = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b;
                if k + 1 < n {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
    }
    [a[0], a[1]]
}

#[test]
fn forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let model = random_model(&mut rng, 29);
        let x: Vec<f64> = (0..29).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = model.forward_raw(&x).unwrap();
        let want = oracle_forward(&model, &x);
        assert!((got.playable - want[0]).abs() < 1e-12 && (got.nonplayable - want[1]).abs() < 1e-12);
        assert_eq!(got.is_playable(), want[0] > want[1]);
    }
}

/// A feature row with the given difficulty, random instrument and beat
/// alignment, and an empty summary block.
fn row(rng: &mut ChaCha8Rng, difficulty: f64) -> FeatureVector {
    let mut v = vec![0.0; FEATURE_WIDTH];
    v[0] = difficulty;
    v[INSTRUMENT_OFFSET + rng.gen_range(0..CATEGORY_COUNT)] = 1.0;
    v[BEAT_OFFSET] = f64::from(rng.gen_range(0..16u8));
    FeatureVector::from_values(v)
}

fn rows(d: &[(FeatureVector, bool)]) -> Vec<(&FeatureVector, bool)> {
    d.iter().map(|(f, y)| (f, *y)).collect()
}

fn f1(pred: &[bool], truth: &[bool]) -> f64 {
    score_chart(pred, truth).unwrap().f1
}

/// Plain logistic regression on the difficulty column alone.
fn logistic_oracle(x: &[f64], y: &[bool]) -> impl Fn(f64) -> bool {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..2000 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let z = w * (xi - mean) + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let e = p - if yi { 1.0 } else { 0.0 };
            gw += e * (xi - mean);
            gb += e;
        }
        w -= 0.5 * gw / x.len() as f64;
        b -= 0.5 * gb / x.len() as f64;
    }
    move |xi| w * (xi - mean) + b > 0.0
}

#[test]
fn learns_a_difficulty_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let make = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(FeatureVector, bool)> {
        (0..n)
            .map(|_| {
                // a margin around the threshold keeps the classes separable
                let d = if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..5.0)
                } else {
                    rng.gen_range(7.0..10.0)
                };
                (row(rng, d), d > 6.0)
            })
            .collect()
    };
    let train = make(&mut rng, 1500);
    let val = make(&mut rng, 300);
    let test = make(&mut rng, 500);
    let cfg = TrainConfig {
        normalize: true,
        batch_size: 32,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (model, _) = train_on(&rows(&train), &rows(&val), FeatureSet::NO_SUMMARY, &cfg).unwrap();
    let fvs: Vec<FeatureVector> = test.iter().map(|r| r.0.clone()).collect();
    let truth: Vec<bool> = test.iter().map(|r| r.1).collect();
    let net = f1(&predict_rows(&model, &fvs).unwrap(), &truth);

    let xs: Vec<f64> = train.iter().map(|r| r.0.difficulty()).collect();
    let ys: Vec<bool> = train.iter().map(|r| r.1).collect();
    let lr = logistic_oracle(&xs, &ys);
    let oracle: Vec<bool> = fvs.iter().map(|f| lr(f.difficulty())).collect();
    let oracle_f1 = f1(&oracle, &truth);
    assert!(oracle_f1 >= 0.95, "oracle {oracle_f1}");
    assert!(net >= 0.95, "network {net} (oracle {oracle_f1})");
}

#[test]
fn memorizes_a_small_random_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<(FeatureVector, bool)> = (0..128)
        .map(|_| {
            let v = (0..FEATURE_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (FeatureVector::from_values(v), rng.gen_bool(0.5))
        })
        .collect();
    let rows: Vec<_> = data.iter().map(|(f, y)| (f, *y)).collect();
    let cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 0.1,
        max_epochs: 1500,
        patience: 1000,
        tolerance: 0.0,
        weights: ClassWeights {
            playable: 1.0,
            nonplayable: 1.0,
        },
        ..TrainConfig::default()
    };
    let (model, report) = train_on(&rows, &rows, FeatureSet::NO_SUMMARY, &cfg).unwrap();
    let fvs: Vec<FeatureVector> = data.iter().map(|r| r.0.clone()).collect();
    let truth: Vec<bool> = data.iter().map(|r| r.1).collect();
    assert_eq!(f1(&predict_rows(&model, &fvs).unwrap(), &truth), 1.0);

    // the learning rate only ever halves, and the kept epoch has the lowest validation loss
    for pair in report.epochs.windows(2) {
        let ratio = pair[1].learning_rate / pair[0].learning_rate;
        assert!(ratio == 1.0 || ratio == 0.5);
    }
    let best = &report.epochs[report.best_epoch - 1];
    assert!(report.epochs.iter().all(|e| e.val_loss >= best.val_loss));
}

#[test]
fn playable_weight_raises_recall() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // overlapping classes: playability is likelier at higher difficulty
        let data: Vec<(FeatureVector, bool)> = (0..600)
            .map(|_| {
                let d: f64 = rng.gen_range(0.0..10.0);
                let p = 1.0 / (1.0 + (-(d - 5.0)).exp());
                (row(&mut rng, d), rng.gen_bool(p))
            })
            .collect();
        let rows: Vec<_> = data.iter().map(|(f, y)| (f, *y)).collect();
        let fvs: Vec<FeatureVector> = data.iter().map(|r| r.0.clone()).collect();
        let truth: Vec<bool> = data.iter().map(|r| r.1).collect();
        let recall = |playable: f64, nonplayable: f64| {
            let cfg = TrainConfig {
                seed,
                normalize: true,
                batch_size: 32,
                learning_rate: 0.05,
                weights: ClassWeights { playable, nonplayable },
                ..TrainConfig::default()
            };
            let (model, _) = train_on(&rows, &rows, FeatureSet::NO_SUMMARY, &cfg).unwrap();
            score_chart(&predict_rows(&model, &fvs).unwrap(), &truth)
                .unwrap()
                .recall
        };
        let favoured = recall(1.0, 0.2);
        let even = recall(1.0, 1.0);
        assert!(favoured >= even, "seed {seed}: {favoured} < {even}");
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<(FeatureVector, bool)> = (0..200)
        .map(|_| {
            let d = rng.gen_range(0.0..10.0);
            (row(&mut rng, d), d > 4.0)
        })
        .collect();
    let rows: Vec<_> = data.iter().map(|(f, y)| (f, *y)).collect();
    let cfg = TrainConfig {
        seed: 9,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let (a, ra) = train_on(&rows, &rows, FeatureSet::FULL, &cfg).unwrap();
    let (b, rb) = train_on(&rows, &rows, FeatureSet::FULL, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ra, rb);
    let other = TrainConfig { seed: 10, ..cfg };
    assert_ne!(
        train_on(&rows, &rows, FeatureSet::FULL, &other).unwrap().0.to_bytes(),
        a.to_bytes()
    );
}
