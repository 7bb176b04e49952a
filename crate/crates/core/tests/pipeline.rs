//! End-to-end smoke test: scripted simulation -> window extraction ->
//! training -> evaluation -> checkpoint round-trip, at desk scale.

use std::ops::ControlFlow;
use std::sync::Arc;

use rand::SeedableRng;
use tenseg_core::graphdata::WindowSet;
use tenseg_core::simkit::{simulate, NoiseModel, Primitive, SimConfig};
use tenseg_core::training::{
    evaluate, load_checkpoint, save_checkpoint, train_with, write_history_csv, TrainConfig,
};

#[test]
fn simulated_data_flows_through_training_and_evaluation() {
    let sequences: Vec<_> = [Primitive::F, Primitive::FL, Primitive::BR]
        .iter()
        .map(|&primitive| {
            let seq = simulate(&SimConfig {
                primitive,
                duration: 13.2,
                noise: NoiseModel {
                    accel_std: 0.02,
                    gyro_std: 0.002,
                    tendon_std: 0.0005,
                },
                seed: 42,
                ..SimConfig::default()
            })
            .unwrap();
            assert!(seq.is_labeled(), "simulated data must carry contact labels");
            Arc::new(seq)
        })
        .collect();

    let mut all = WindowSet::from_sequences(sequences, 25, 10).unwrap();
    assert!(all.len() > 300, "expected a few hundred windows, got {}", all.len());
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
    all.shuffle(&mut rng);
    let (train_set, val_set) = all.split(0.8);
    assert!(!train_set.is_empty() && !val_set.is_empty());

    let config = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 64,
        epochs: 2,
        layers: 2,
        hidden: 16,
        window: 25,
        seed: 5,
        symmetry_enabled: false,
        ..TrainConfig::default()
    };
    let mut epochs_seen = 0;
    let outcome = train_with(&train_set, &val_set, &config, |record, _| {
        epochs_seen += 1;
        assert!(record.train_loss.is_finite() && record.train_loss > 0.0);
        ControlFlow::Continue(())
    })
    .unwrap();

    assert_eq!(epochs_seen, 2);
    assert_eq!(outcome.history.len(), 2);
    let m = &outcome.best_metrics;
    assert_eq!(m.windows, val_set.len());
    assert!((0.0..=1.0).contains(&m.exact_match_accuracy));
    assert!((0.0..=1.0).contains(&m.macro_f1));

    let mut csv = Vec::new();
    write_history_csv(&mut csv, &outcome.history, true).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 3, "header plus one line per epoch");

    // a reloaded checkpoint scores the validation set identically
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_checkpoint(&outcome.params, &config, &path).unwrap();
    let (params, config_back) = load_checkpoint(&path).unwrap();
    assert_eq!(config_back, config);
    let again = evaluate(&params, &val_set, config.symmetry_enabled).unwrap();
    assert_eq!(again.exact_match_accuracy, m.exact_match_accuracy);
    assert_eq!(again.macro_f1, m.macro_f1);

    // the symmetry-averaged evaluator consumes the same data and parameters
    let sym = evaluate(&params, &val_set, true).unwrap();
    assert!(sym.macro_f1.is_finite());
}
