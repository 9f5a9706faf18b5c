use deq_core::data::{make_two_spirals, Dataset};
use deq_core::training::{train, Model, RunRecord, TrainConfig};
use deq_core::{Strategy, StrategyConfig};

/// Full-batch gradient descent on softmax-free binary logistic regression
/// over the raw features, then training-set accuracy.
fn logistic_baseline_accuracy(d: &Dataset) -> f64 {
    let n = d.len() as f64;
    let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
    for _ in 0..2000 {
        let (mut gw, mut gb) = ([0.0f64; 2], 0.0f64);
        for (x, &y) in d.features.iter().zip(&d.labels) {
            let s = w[0] * x[0] + w[1] * x[1] + b;
            let err = 1.0 / (1.0 + (-s).exp()) - y as f64;
            gw[0] += err * x[0];
            gw[1] += err * x[1];
            gb += err;
        }
        w[0] -= 0.5 * gw[0] / n;
        w[1] -= 0.5 * gw[1] / n;
        b -= 0.5 * gb / n;
    }
    let correct = d
        .features
        .iter()
        .zip(&d.labels)
        .filter(|(x, &y)| usize::from(w[0] * x[0] + w[1] * x[1] + b > 0.0) == y)
        .count();
    correct as f64 / n
}

#[test]
fn two_spirals_defeat_a_linear_classifier() {
    let d = make_two_spirals(2000, 0.05, 1).unwrap();
    let acc = logistic_baseline_accuracy(&d);
    assert!(acc < 0.6, "logistic baseline reached {acc}");
}

fn small_run(strategy: StrategyConfig) -> RunRecord {
    let train_set = make_two_spirals(192, 0.05, 5).unwrap();
    let test_set = make_two_spirals(64, 0.05, 6).unwrap();
    let mut cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        strategy,
        fidelity_every: 2,
        ..TrainConfig::default()
    };
    cfg.model.d_z = 12;
    cfg.pretrain.enabled = true;
    cfg.pretrain.epochs = 2;
    let model = Model::init(2, 2, &cfg.model, cfg.seed).unwrap();
    train(model, &train_set, &test_set, &cfg)
        .unwrap()
        .record()
        .clone()
}

fn without_wall_clock(mut r: RunRecord) -> RunRecord {
    for row in &mut r.epochs {
        row.wall_s = 0.0;
    }
    r
}

#[test]
fn same_seed_gives_identical_records() {
    for s in Strategy::ALL {
        let a = without_wall_clock(small_run(s.default_config()));
        let b = without_wall_clock(small_run(s.default_config()));
        assert_eq!(a, b, "{}", s.label());
        assert!(!a.probes.is_empty());
    }
}
