//! Training runs on generated data with a known answer.

use lorentzfm::eval;
use lorentzfm::model::ModelKind;
use lorentzfm::synthetic::{generate_synthetic, SyntheticSpec};
use lorentzfm::train::{train, TrainConfig, TrainOptions};
use lorentzfm::Execution;

#[test]
fn no_signal_gives_chance_auc() {
    let spec = SyntheticSpec {
        strength: 0.0,
        instances: 20_000,
        ..SyntheticSpec::default()
    };
    let d = generate_synthetic(&spec, 8).unwrap();
    assert_eq!(d.bayes_auc, 0.5);
    let labels: Vec<u8> = d.bundle.val.iter().map(|e| e.instance.label).collect();
    for kind in [ModelKind::LorentzFm, ModelKind::Fm] {
        let config = TrainConfig {
            model: kind,
            max_epochs: 8,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&config, &d.bundle, &TrainOptions::default()).unwrap();
        let probs = eval::predict(&out.best.model, &d.bundle.val, Execution::Parallel).unwrap();
        let auc = eval::auc(&probs, &labels).unwrap();
        assert!((0.45..=0.55).contains(&auc), "{kind}: AUC {auc}");
    }
}

#[test]
fn lorentz_rows_stay_on_the_manifold_through_training() {
    let spec = SyntheticSpec {
        instances: 5_000,
        tokens_per_field: 30,
        ..SyntheticSpec::default()
    };
    let d = generate_synthetic(&spec, 3).unwrap();
    let config = TrainConfig {
        max_epochs: 6,
        learning_rate: 0.3,
        burn_in_epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(&config, &d.bundle, &TrainOptions::default()).unwrap();
    for r in &out.history.records {
        assert!(
            r.max_residual.unwrap() < 1e-9,
            "epoch {}: {:?}",
            r.epoch,
            r.max_residual
        );
    }
    assert!(out.last.model.max_residual().unwrap() < 1e-9);
}
