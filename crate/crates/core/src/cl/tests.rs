use rand::seq::SliceRandom;

use super::*;
use crate::data::{Dataset, Generator, Split};
use crate::error::Error;
use crate::model::{Activation, ModelSpec};
use crate::optim::{
    sgd_step, HyperParams, OptimizerConfig, OptimizerKind, OptimizerState, Schedule,
};
use crate::oracle::MlpLoss;
use crate::param::ParamVector;
use crate::seed::{self, Stream};

fn blobs(classes: usize, separation: f64) -> Split {
    Generator::GaussianBlobs {
        classes,
        dim: 4,
        separation,
        samples_per_class: 30,
    }
    .generate(2)
    .unwrap()
}

fn experiment(kind: OptimizerKind, epochs: usize, replay: usize) -> Experiment {
    let hp = HyperParams {
        lr: 0.05,
        ..HyperParams::default()
    };
    Experiment {
        hidden: vec![8],
        activation: Activation::Relu,
        optimizer: OptimizerConfig::new(kind, hp),
        schedule: Schedule::default(),
        train: TrainConfig {
            epochs,
            batch_size: 16,
            replay_capacity: replay,
            anchor_strength: 0.0,
        },
    }
}

#[test]
fn phase_zero_sgd_is_plain_supervised_training() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let exp = experiment(OptimizerKind::Sgd, 3, 10);
    let mut learner = Learner::new(4, vec![8], Activation::Relu, 2, 7).unwrap();
    let mut replay = ReplayBuffer::new(10, 7);
    run_phase(&stream, 0, &mut learner, &split.train, &exp, &mut replay, 7).unwrap();

    // Hand-rolled loop over the phase-0 rows with the same shuffles.
    let spec = ModelSpec::new(4, vec![8], 2, Activation::Relu, 7);
    let oracle = MlpLoss::new(spec.clone()).unwrap();
    let mut w = crate::model::init_params(&spec).unwrap();
    let mut state = OptimizerState::new(w.layout(), 7);
    let rows = split.train.indices_of(&[0, 1]);
    let pool = split.train.subset(&rows);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 1..=3 {
        let s = exp
            .schedule
            .at(epoch, 3, exp.optimizer.hp.lr, exp.optimizer.hp.rho);
        let hp = HyperParams {
            lr: s.lr,
            ..exp.optimizer.hp
        };
        order.shuffle(&mut seed::rng(7, Stream::Shuffle, epoch as u64));
        for chunk in order.chunks(16) {
            let batch = pool.batch(chunk, |y| y).unwrap();
            w = sgd_step(&oracle, &w, &batch, &mut state, &hp).unwrap().0;
        }
    }
    assert_eq!(learner.params, w);
    assert_eq!(replay.len(), 10);
}

#[test]
fn zero_capacity_is_fine_tuning() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let out = run_continual(&experiment(OptimizerKind::Sgd, 2, 0), &stream, &split, 1).unwrap();
    assert!(out.replay.is_empty());
    assert_eq!(
        out.phases[1].pool_size,
        split.train.indices_of(&[2, 3]).len()
    );
}

#[test]
fn head_grows_and_trackers_reset() {
    let split = blobs(6, 3.0);
    let stream = build_stream("blobs", 6, 3, 2, None).unwrap();
    let out = run_continual(&experiment(OptimizerKind::Flad, 2, 12), &stream, &split, 3).unwrap();
    assert_eq!(out.learner.spec.classes, 6);
    assert_eq!(out.learner.params.len(), out.learner.spec.param_count());
    assert_eq!(out.ledger.rows().len(), 3);
    assert_eq!(out.replay.len(), 12);
    assert!(out.phases.iter().all(|p| p.sharpness_steps == p.steps));
    assert_eq!(
        out.phases[2].pool_size,
        split.train.indices_of(&[4, 5]).len() + 12
    );
}

#[test]
fn phases_must_run_in_order() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let exp = experiment(OptimizerKind::Sgd, 1, 0);
    let mut learner = Learner::new(4, vec![8], Activation::Relu, 2, 0).unwrap();
    let mut replay = ReplayBuffer::new(0, 0);
    assert!(run_phase(&stream, 1, &mut learner, &split.train, &exp, &mut replay, 0).is_err());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let split = blobs(6, 2.0);
    let stream = build_stream("blobs", 6, 3, 2, Some(4)).unwrap();
    let exp = experiment(OptimizerKind::Flad, 2, 9);
    let a = run_continual(&exp, &stream, &split, 11).unwrap();
    let b = run_continual(&exp, &stream, &split, 11).unwrap();
    assert_eq!(a.learner.params, b.learner.params);
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.replay, b.replay);
    assert_eq!(a.phases, b.phases);
    let c = run_continual(&exp, &stream, &split, 12).unwrap();
    assert_ne!(a.learner.params, c.learner.params);
}

#[test]
fn single_phase_reduces_to_joint_training() {
    let split = blobs(3, 3.0);
    let stream = build_stream("blobs", 3, 1, 3, None).unwrap();
    let out = run_continual(&experiment(OptimizerKind::Sgd, 5, 0), &stream, &split, 0).unwrap();
    let oracle = out.learner.oracle().unwrap();
    let rows: Vec<usize> = (0..split.test.len()).collect();
    let batch = split.test.batch(&rows, |y| y).unwrap();
    let hits = oracle
        .predict(&out.learner.params, &batch)
        .unwrap()
        .iter()
        .zip(batch.labels())
        .filter(|(p, y)| p == y)
        .count();
    let acc = hits as f64 / rows.len() as f64;
    assert_eq!(out.ledger.rows(), &[vec![acc]]);
    assert_eq!(out.ledger.acc_final().unwrap(), acc);
    assert_eq!(out.ledger.aaa().unwrap(), acc);
}

#[test]
fn separable_joint_training_is_perfect() {
    let split = blobs(4, 12.0);
    let stream = build_stream("blobs", 4, 1, 4, None).unwrap();
    let out = run_continual(&experiment(OptimizerKind::Sgd, 30, 0), &stream, &split, 0).unwrap();
    assert_eq!(out.ledger.rows(), &[vec![1.0]]);
}

#[test]
fn untrained_classifier_is_at_chance() {
    let split = Generator::GaussianBlobs {
        classes: 4,
        dim: 4,
        separation: 0.0,
        samples_per_class: 500,
    }
    .generate(9)
    .unwrap();
    let stream = build_stream("blobs", 4, 1, 4, None).unwrap();
    let learner = Learner::new(4, vec![8], Activation::Relu, 4, 5).unwrap();
    let acc = evaluate(
        &learner.oracle().unwrap(),
        &learner.params,
        &stream,
        0,
        &split.test,
    )
    .unwrap()[0];
    let n = split.test.len() as f64;
    let bound = 3.0 * (0.25 * 0.75 / n).sqrt();
    // Inputs carry no class signal, so any fixed classifier sits at chance.
    assert!((acc - 0.25).abs() < bound, "acc {acc}, bound {bound}");
}

#[test]
fn evaluate_matches_hand_confusion_count() {
    // Linear head: class k scores ±x or ±y.
    let spec = ModelSpec::new(2, vec![], 4, Activation::Relu, 0);
    let w = ParamVector::new(
        vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0],
        spec.layout(),
    )
    .unwrap();
    let test = Dataset::new(
        vec![
            2.0, 0.5, 0.2, 1.0, 1.0, 0.1, -1.0, 0.2, 0.3, -2.0, 0.5, -0.1, -2.0, -1.0,
        ],
        2,
        vec![0, 1, 1, 2, 3, 3, 2],
        4,
    )
    .unwrap();
    let stream = build_stream("micro", 4, 2, 2, None).unwrap();
    let row = evaluate(&MlpLoss::new(spec).unwrap(), &w, &stream, 1, &test).unwrap();
    assert_eq!(row, vec![2.0 / 3.0, 3.0 / 4.0]);
}

#[test]
fn missing_test_rows_are_reported() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let learner = Learner::new(4, vec![8], Activation::Relu, 4, 5).unwrap();
    let test = split.test.subset(&split.test.indices_of(&[0, 1]));
    let err = evaluate(
        &learner.oracle().unwrap(),
        &learner.params,
        &stream,
        1,
        &test,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let mut split = blobs(4, 3.0);
    let mut inputs = Vec::new();
    for i in 0..split.train.len() {
        inputs.extend_from_slice(split.train.row(i));
    }
    inputs[0] = f64::NAN;
    split.train = Dataset::new(inputs, 4, split.train.labels().to_vec(), 4).unwrap();
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let err =
        run_continual(&experiment(OptimizerKind::Flad, 2, 0), &stream, &split, 0).unwrap_err();
    match err {
        Error::Aborted { phase, epoch, .. } => assert_eq!((phase, epoch), (0, 1)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err_is_numerical(&split, &stream));
}

fn err_is_numerical(split: &Split, stream: &TaskStream) -> bool {
    run_continual(&experiment(OptimizerKind::Sgd, 1, 0), stream, split, 0)
        .unwrap_err()
        .is_numerical()
}

#[test]
fn window_limits_sharpness_steps() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let mut exp = experiment(OptimizerKind::Flad, 10, 8);
    exp.schedule = Schedule::default().with_window(0.8, 1.0);
    let out = run_continual(&exp, &stream, &split, 0).unwrap();
    for p in &out.phases {
        assert_eq!(p.sharpness_steps * 5, p.steps);
        assert!(p.epochs.iter().filter(|e| e.sharpness_active).count() == 2);
    }
}

#[test]
fn anchor_hook_pulls_toward_previous_phase() {
    let split = blobs(4, 3.0);
    let stream = build_stream("blobs", 4, 2, 2, None).unwrap();
    let free = run_continual(&experiment(OptimizerKind::Sgd, 4, 0), &stream, &split, 0).unwrap();
    let mut exp = experiment(OptimizerKind::Sgd, 4, 0);
    exp.train.anchor_strength = 5.0;
    let anchored = run_continual(&exp, &stream, &split, 0).unwrap();
    // Same phase-0 endpoint; the anchored run drifts less in the shared body.
    let mut reference = Learner::new(4, vec![8], Activation::Relu, 2, 0).unwrap();
    let mut replay = ReplayBuffer::new(0, 0);
    run_phase(
        &stream,
        0,
        &mut reference,
        &split.train,
        &exp,
        &mut replay,
        0,
    )
    .unwrap();
    let body = 4 * 8 + 8;
    let drift = |w: &ParamVector| {
        w.as_slice()[..body]
            .iter()
            .zip(&reference.params.as_slice()[..body])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    assert!(drift(&anchored.learner.params) < drift(&free.learner.params));
}

#[test]
fn invalid_train_config() {
    let zero_batch = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(zero_batch.validate().is_err());
    let negative_anchor = TrainConfig {
        anchor_strength: -1.0,
        ..TrainConfig::default()
    };
    assert!(negative_anchor.validate().is_err());
}
