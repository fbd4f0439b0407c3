//! End-to-end training behavior on small real datasets: losses fall,
//! runs reproduce bit for bit, zero-weight supervision changes nothing,
//! and divergence aborts cleanly.

use phasecast::datagen::{build_dataset, Dataset, Split, SplitSpec};
use phasecast::dynsys::SystemKind;
use phasecast::neural::{Family, Model, ModelSpec};
use phasecast::trainer::{fit, PlateauConfig, StopReason, TrainConfig};

fn tiny_pendulum(split: Split, n: usize, seed: u64) -> Dataset {
    let spec = SplitSpec::canonical(SystemKind::Pendulum, split).with_count(n);
    let ranges = spec.factor_ranges.clone();
    build_dataset(SystemKind::Pendulum, &spec, &ranges, seed).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 20,
        windows_per_epoch: Some(4),
        lr: 3e-3,
        clip_norm: Some(1.0),
        plateau: PlateauConfig::default(),
        early_stop_patience: 30,
        val_windows: 16,
        clean_targets: false,
    }
}

#[test]
fn training_reduces_the_loss() {
    let train = tiny_pendulum(Split::Train, 8, 101);
    let val = tiny_pendulum(Split::Val, 4, 102);
    let spec = ModelSpec::new(Family::MlpAe, 6, 2, 17)
        .with_hidden(vec![16])
        .with_latent(3);

    let outcome = fit(&spec, &train, &val, &quick_config()).unwrap();
    let record = &outcome.record;
    assert_eq!(record.stop, StopReason::MaxEpochs);
    assert_eq!(record.epochs.len(), 20);

    let first = record.epochs.first().unwrap();
    let best = record.best_val.unwrap();
    assert!(
        best < first.val_loss,
        "validation never improved: first {} best {}",
        first.val_loss,
        best
    );
    let last = record.epochs.last().unwrap();
    assert!(
        last.train_total < first.train_total,
        "train loss did not fall: {} -> {}",
        first.train_total,
        last.train_total
    );
    // Unsupervised deterministic family: no KL, no supervision terms.
    assert!(first.train_kl.is_none());
    assert!(first.train_supervised.is_none());
}

#[test]
fn variational_training_reports_all_loss_terms() {
    let train = tiny_pendulum(Split::Train, 8, 103);
    let val = tiny_pendulum(Split::Val, 4, 104);
    let spec = ModelSpec::new(Family::VaeSsd, 6, 2, 19)
        .with_hidden(vec![16])
        .with_latent(2)
        .with_gamma(0.1)
        .with_delta(0.1);

    let mut cfg = quick_config();
    cfg.max_epochs = 5;
    let outcome = fit(&spec, &train, &val, &cfg).unwrap();
    let first = outcome.record.epochs.first().unwrap();
    assert!(first.train_kl.unwrap().is_finite());
    assert!(first.train_supervised.unwrap().is_finite());
    assert!(outcome.record.best_val.unwrap().is_finite());
}

#[test]
fn zero_weight_supervision_trains_identically_to_no_supervision() {
    let train = tiny_pendulum(Split::Train, 8, 105);
    let val = tiny_pendulum(Split::Val, 4, 106);

    let base = ModelSpec::new(Family::Vae, 6, 2, 23)
        .with_hidden(vec![12])
        .with_latent(2);
    let supervised = ModelSpec::new(Family::VaeSd, 6, 2, 23)
        .with_hidden(vec![12])
        .with_latent(2)
        .with_delta(0.0);

    let mut cfg = quick_config();
    cfg.max_epochs = 6;
    let a = fit(&base, &train, &val, &cfg).unwrap();
    let b = fit(&supervised, &train, &val, &cfg).unwrap();

    for (ea, eb) in a.record.epochs.iter().zip(&b.record.epochs) {
        assert_eq!(ea.train_total.to_bits(), eb.train_total.to_bits(), "epoch {}", ea.epoch);
        assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits(), "epoch {}", ea.epoch);
    }
    // The supervised run logs its (unweighted) supervision term even
    // though the term never enters the total.
    assert!(b.record.epochs[0].train_supervised.is_some());
    assert!(a.record.epochs[0].train_supervised.is_none());

    for (ta, tb) in a.model.param_tensors().iter().zip(b.model.param_tensors()) {
        for (va, vb) in ta.data().iter().zip(tb.data()) {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
    }
}

#[test]
fn identical_runs_reproduce_bit_for_bit() {
    let train = tiny_pendulum(Split::Train, 8, 107);
    let val = tiny_pendulum(Split::Val, 4, 108);
    let spec = ModelSpec::new(Family::VaeSd, 6, 2, 29)
        .with_hidden(vec![12])
        .with_latent(2);

    let mut cfg = quick_config();
    cfg.max_epochs = 6;
    let a = fit(&spec, &train, &val, &cfg).unwrap();
    let b = fit(&spec, &train, &val, &cfg).unwrap();

    // Records serialize identically (they carry no timing), and the
    // trained parameters match bit for bit.
    assert_eq!(
        serde_json::to_string(&a.record).unwrap(),
        serde_json::to_string(&b.record).unwrap()
    );
    for (ta, tb) in a.model.param_tensors().iter().zip(b.model.param_tensors()) {
        assert_eq!(ta.data(), tb.data());
    }
}

#[test]
fn exploding_steps_end_the_run_with_a_divergence_verdict() {
    let train = tiny_pendulum(Split::Train, 8, 109);
    let val = tiny_pendulum(Split::Val, 4, 110);
    let spec = ModelSpec::new(Family::Vae, 6, 2, 31)
        .with_hidden(vec![12])
        .with_latent(2);

    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 10,
        windows_per_epoch: Some(4),
        lr: 1e12,
        clip_norm: None,
        plateau: PlateauConfig::default(),
        early_stop_patience: 30,
        val_windows: 16,
        clean_targets: false,
    };
    let outcome = fit(&spec, &train, &val, &cfg).unwrap();
    assert_eq!(outcome.record.stop, StopReason::Diverged);

    // Nothing ever improved, so the model falls back to its initial
    // parameters — finite by construction, identical to a fresh build.
    let fresh = Model::build(spec, SystemKind::Pendulum).unwrap();
    for (t, f) in outcome.model.param_tensors().iter().zip(fresh.param_tensors()) {
        assert_eq!(t.data(), f.data());
        assert!(t.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn stagnation_stops_early_after_the_patience_budget() {
    let train = tiny_pendulum(Split::Train, 8, 111);
    let val = tiny_pendulum(Split::Val, 4, 112);
    let spec = ModelSpec::new(Family::MlpAe, 6, 2, 37)
        .with_hidden(vec![12])
        .with_latent(2);

    // A learning rate this small cannot clear the relative improvement
    // margin, so the first epoch stays the best one forever.
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 50,
        windows_per_epoch: Some(2),
        lr: 1e-30,
        clip_norm: Some(1.0),
        plateau: PlateauConfig {
            min_lr: 1e-32,
            ..PlateauConfig::default()
        },
        early_stop_patience: 3,
        val_windows: 16,
        clean_targets: false,
    };
    let outcome = fit(&spec, &train, &val, &cfg).unwrap();
    assert_eq!(outcome.record.stop, StopReason::EarlyStop);
    assert_eq!(outcome.record.best_epoch, 1);
    // Epoch 1 improves on nothing-yet; the next patience epochs stall;
    // one more epoch overruns the budget and stops the run.
    assert_eq!(outcome.record.epochs.len(), cfg.early_stop_patience + 2);
}
