mod common;

use clsr_core::data::SynthConfig;
use clsr_core::eval::{ablation_run, evaluate, AblationVariant};
use clsr_core::trainer::{train, write_step_log, TrainError};
use clsr_core::{LossConfig, LossWeights, TrainConfig};
use common::synthetic;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        hidden: 16,
        embed_dim: 8,
        base_lr: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn small_data() -> clsr_core::PairedDataset {
    synthetic(
        &SynthConfig {
            n_pairs: 60,
            d_a: 12,
            d_t: 10,
            ..SynthConfig::default()
        },
        4,
    )
}

#[test]
fn zero_epochs_returns_initial_params() {
    let data = small_data();
    let config = TrainConfig {
        epochs: 0,
        ..small_config(1)
    };
    let out = train(&config, &data, &LossConfig::full(&config.loss)).unwrap();
    assert!(out.log.is_empty());
    let init = clsr_core::ModelParams::<f32>::init(config.model_dims(&data), 1).unwrap();
    assert_eq!(out.params, init);
}

#[test]
fn single_batch_loss_decreases_over_200_steps() {
    let data = synthetic(
        &SynthConfig {
            n_pairs: 4,
            ..SynthConfig::default()
        },
        2,
    );
    let config = TrainConfig {
        epochs: 200,
        batch_size: 4,
        val_fraction: 0.0,
        lr_decay: 1.0,
        hidden: 32,
        embed_dim: 16,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let out = train(&config, &data, &LossConfig::full(&config.loss)).unwrap();
    assert_eq!(out.log.len(), 200);
    let (first, last) = (out.log[0].loss.total, out.log[199].loss.total);
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn logged_steps_reconcile_and_tau_stays_in_bounds() {
    let data = small_data();
    let config = small_config(2);
    let out = train(&config, &data, &LossConfig::full(&config.loss)).unwrap();
    let w = LossWeights::default();
    for r in &out.log {
        assert!(r.loss.reconciliation_error(w.alpha, w.beta) <= 1e-5);
        assert!(r.loss.tau >= w.tau0 / w.gamma && r.loss.tau <= w.tau0 * w.gamma);
    }
    for e in &out.epochs {
        assert!(e.tau_min <= e.tau_mean && e.tau_mean <= e.tau_max);
        assert_eq!(e.dropped, out.split.train.len() % config.batch_size);
    }
}

#[test]
fn identical_seeds_are_bit_identical() {
    let data = small_data();
    let config = small_config(9);
    let run = || {
        let out = train(&config, &data, &LossConfig::full(&config.loss)).unwrap();
        let mut csv = Vec::new();
        write_step_log(&out.log, &mut csv).unwrap();
        (csv, out.final_checkpoint(9).to_bytes())
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_objective_aborts_with_last_good_checkpoint() {
    let data = small_data();
    let config = small_config(3);
    // A huge step drives the weights to overflow.
    let config = TrainConfig {
        base_lr: 1e30,
        optimizer: clsr_core::OptimizerKind::Sgd,
        ..config
    };
    match train(&config, &data, &LossConfig::full(&config.loss)) {
        Err(TrainError::NonFiniteLoss { last_good, .. }) | Err(TrainError::NonFiniteGradient { last_good, .. }) => {
            assert!(last_good.params.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite())));
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.log.len())),
    }
}

#[test]
fn ablation_variants_modify_only_their_term() {
    let data = small_data();
    let base = small_config(6);
    let table = ablation_run(&base, &AblationVariant::ALL, &[6], &data).unwrap();
    let rows = table.rows();
    assert_eq!(rows.len(), 5);
    for run in &table.runs {
        for r in &run.outcome.log {
            match run.variant {
                AblationVariant::T => assert_eq!(r.loss.tau, 0.07),
                AblationVariant::K => assert_eq!(r.loss.sem, 0.0),
                AblationVariant::M => {
                    assert_eq!(r.loss.rec, 0.0);
                    assert!((r.loss.total - (r.loss.con + base.loss.alpha * r.loss.sem)).abs() <= 1e-12);
                }
                AblationVariant::S => assert_eq!((r.loss.a2a, r.loss.t2t), (0.0, 0.0)),
                AblationVariant::Full => {}
            }
        }
    }
    let full = table.runs.iter().find(|r| r.variant == AblationVariant::Full).unwrap();
    let plain = train(&base, &data, &LossConfig::full(&base.loss)).unwrap();
    assert_eq!(plain.params, full.outcome.params);
    assert_eq!(plain.log, full.outcome.log);
    assert_eq!(evaluate(&plain.params, &data, &plain.split.val).unwrap(), full.report);
    let text = table.to_text();
    assert_eq!(text.lines().count(), 3 + 5);
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
}
