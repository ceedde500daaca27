use rau_core::model::ModelDims;
use rau_core::rau::{argmax, forward_example};
use rau_core::taskgen::{build_dataset, DatasetConfig, QAExample};
use rau_core::tensor::Tensor;
use rau_core::trainer::*;

fn data(n: usize, seed: u64) -> (Vec<QAExample>, Vec<QAExample>) {
    let ds = build_dataset(&DatasetConfig {
        train: n,
        val: n / 2,
        test: 1,
        seed,
        ..Default::default()
    })
    .unwrap();
    (ds.train.examples, ds.val.examples)
}

fn dims() -> ModelDims {
    ModelDims {
        vocab: 22,
        word_dim: 6,
        question_hidden: 6,
        channels: 8,
        locations: 16,
        hidden: 10,
        attention: 6,
        classes: 9,
    }
}

fn quick(k: usize, mode: EarlyStopMode) -> TrainConfig {
    TrainConfig {
        k,
        t_min: 1,
        t_max: 3,
        batch_size: 8,
        early_stop: mode,
        train_eval_size: 20,
        ..Default::default()
    }
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let (train, val) = data(40, 1);
    let cfg = quick(3, EarlyStopMode::Validation);
    let run = || {
        let m = init_model(dims(), 9).unwrap();
        run_training(m, &train, &val, &cfg, &RunOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn metrics_table_layout() {
    let (train, val) = data(24, 2);
    let out = run_training(init_model(dims(), 1).unwrap(), &train, &val, &quick(2, EarlyStopMode::Off), &RunOptions::default()).unwrap();
    let csv = metrics_csv(&out.metrics);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + out.epochs_run * 2 * 2);
    assert!(lines[1].starts_with("1,1,train,"));
    assert!(lines[2].starts_with("1,1,val,"));
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[3].split('.').nth(1).unwrap().len(), 6);
    assert!(lines[1].ends_with(",1,0.003000,0.000300"));
    assert!(lines[5].ends_with(",1,0.002700,0.000270"));
}

#[test]
fn single_unit_without_stopping_is_plain_training() {
    let (train, val) = data(24, 3);
    let out = run_training(init_model(dims(), 2).unwrap(), &train, &val, &quick(1, EarlyStopMode::Off), &RunOptions::default()).unwrap();
    assert!(out.events.is_empty());
    assert!(out.metrics.iter().all(|r| r.unit == 1 && r.active));
}

#[test]
fn collapsed_schedule_stops_every_unit_together() {
    let (train, val) = data(24, 4);
    let cfg = TrainConfig {
        t_min: 2,
        t_max: 2,
        ..quick(4, EarlyStopMode::Formula)
    };
    let out = run_training(init_model(dims(), 3).unwrap(), &train, &val, &cfg, &RunOptions::default()).unwrap();
    let epochs: Vec<usize> = out.events.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![2, 2, 2]);
    assert!(out.events.iter().all(|e| e.trigger == Trigger::Formula));
    assert_eq!(out.early_stop.active_mask(), vec![true, false, false, false]);
}

#[test]
fn formula_mode_follows_schedule() {
    let (train, val) = data(16, 5);
    let cfg = TrainConfig {
        t_min: 1,
        t_max: 4,
        saturation_patience: 10,
        ..quick(3, EarlyStopMode::Formula)
    };
    let out = run_training(init_model(dims(), 3).unwrap(), &train, &val, &cfg, &RunOptions::default()).unwrap();
    let stops = schedule_stop_epochs(1, 4, 1.0, 3).unwrap();
    for ev in &out.events {
        assert_eq!(ev.epoch, stops[ev.unit - 1]);
    }
    for row in &out.metrics {
        assert_eq!(row.active, row.epoch <= stops[row.unit - 1] || row.unit == 1);
    }
}

#[test]
fn evaluation_matches_one_example_at_a_time() {
    let (train, _) = data(150, 6);
    let model = init_model(dims(), 4).unwrap();
    let rep = evaluate_split(&model, &train, 3).unwrap();
    for k in 0..3 {
        let mut acc = 0.0;
        for ex in &train {
            let steps = forward_example(&model, &ex.features, &ex.question, 3).unwrap();
            acc += vqa_accuracy(argmax(&steps[k].a), &ex.annotators).unwrap();
        }
        assert_eq!(rep.accuracy[k], acc / train.len() as f64);
    }
    assert!(evaluate_split(&model, &[], 1).is_err());
}

#[test]
fn non_finite_loss_aborts_with_epoch_and_batch() {
    let (mut train, val) = data(16, 7);
    let bad = Tensor::full(train[0].features.shape(), f64::NAN);
    train[0].features = bad;
    let err = run_training(init_model(dims(), 1).unwrap(), &train, &val, &quick(2, EarlyStopMode::Off), &RunOptions::default()).unwrap_err();
    match err {
        rau_core::Error::Divergence { epoch, batch } => {
            assert_eq!(epoch, 1);
            assert!(batch >= 1);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn checkpoints_written_each_epoch() {
    let (train, val) = data(16, 8);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        verbose: false,
    };
    let out = run_training(init_model(dims(), 1).unwrap(), &train, &val, &quick(2, EarlyStopMode::Off), &opts).unwrap();
    let best = rau_core::checkpoint::load(&dir.path().join("checkpoint-best.rauc")).unwrap();
    let last = rau_core::checkpoint::load(&dir.path().join("checkpoint-last.rauc")).unwrap();
    assert_eq!(best.params, out.best.params);
    assert_eq!(last.params, out.model.params);
}

#[test]
fn saturation_ends_training_early() {
    let (train, val) = data(16, 9);
    let cfg = TrainConfig {
        t_max: 40,
        saturation_patience: 2,
        lr_encoder: 1e-9,
        lr_answering: 1e-9,
        ..quick(1, EarlyStopMode::Off)
    };
    let out = run_training(init_model(dims(), 1).unwrap(), &train, &val, &cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.epochs_run, 3);
}

#[test]
fn validation_mode_without_deactivation_matches_no_stopping() {
    let (train, val) = data(24, 10);
    let run = |mode| {
        let cfg = TrainConfig {
            val_drop_threshold: 100.0,
            ..quick(3, mode)
        };
        run_training(init_model(dims(), 5).unwrap(), &train, &val, &cfg, &RunOptions::default()).unwrap()
    };
    let (v, off) = (run(EarlyStopMode::Validation), run(EarlyStopMode::Off));
    assert!(v.events.is_empty());
    assert_eq!(metrics_csv(&v.metrics), metrics_csv(&off.metrics));
    assert_eq!(v.model.params, off.model.params);
}
