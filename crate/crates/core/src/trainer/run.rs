use std::fmt;
use std::path::PathBuf;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{ModelDims, RauModel};
use crate::rau::{argmax, forward, stack_feature_maps, Dropout};
use crate::taskgen::QAExample;
use crate::tensor::{Graph, SeededRng, Tensor};

use super::early_stop::{schedule_stop_epochs, update_validation_early_stop, EarlyStopState, StopEvent};
use super::loss::{joint_loss_graph, vqa_accuracy, LOG_EPS};
use super::optim::{
    adam_step, add_gradient_noise, clip_gradients, collect_grads, decay_learning_rates,
    LearningRates, OptimizerState,
};
use super::{EarlyStopMode, TrainConfig};

pub const METRICS_HEADER: &str = "epoch,unit,split,loss,accuracy,active,lr_enc,lr_ans";

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Examples evaluated per forward pass.
const EVAL_CHUNK: usize = 128;

/// Minimum gain in unit-1 validation accuracy (as a fraction) that resets
/// the saturation counter.
const SATURATION_GAIN: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// 1-based.
    pub unit: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Whether the unit's loss was part of this epoch's training objective.
    pub active: bool,
    pub lr_enc: f64,
    pub lr_ans: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6}\n",
            r.epoch,
            r.unit,
            r.split,
            r.loss,
            r.accuracy,
            u8::from(r.active),
            r.lr_enc,
            r.lr_ans
        ));
    }
    out
}

/// Per-unit accuracy and mean cross entropy over a split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
    pub examples: usize,
}

/// Fresh Glorot-initialized model on the seed's initialization stream.
pub fn init_model(dims: ModelDims, seed: u64) -> Result<RauModel> {
    RauModel::new(dims, &mut SeededRng::stream(seed, STREAM_INIT))
}

/// Indices ordered by question length; ties keep their original order.
fn by_length(examples: &[&QAExample]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by_key(|&i| examples[i].question.len());
    idx
}

/// Runs `k_measure` units over every example with dropout off. Per-example
/// scores are summed in example order, so the result does not depend on how
/// examples are grouped into forward passes.
pub fn evaluate_split(model: &RauModel, examples: &[QAExample], k_measure: usize) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::contract("evaluate_split: empty split"));
    }
    let refs: Vec<&QAExample> = examples.iter().collect();
    let order = by_length(&refs);
    let mut acc = vec![vec![0.0; k_measure]; examples.len()];
    let mut ce = vec![vec![0.0; k_measure]; examples.len()];
    for chunk in order.chunks(EVAL_CHUNK) {
        let maps: Vec<&Tensor> = chunk.iter().map(|&i| &examples[i].features).collect();
        let qs: Vec<&[usize]> = chunk.iter().map(|&i| examples[i].question.as_slice()).collect();
        let stacked = stack_feature_maps(&maps)?;
        let mut g = Graph::new();
        let steps = forward(&mut g, model, &stacked, &qs, k_measure, &mut Dropout::Off)?;
        for (k, step) in steps.iter().enumerate() {
            let a = g.value(step.answer);
            for (col, &i) in chunk.iter().enumerate() {
                let probs = a.column(col);
                let ex = &examples[i];
                acc[i][k] = vqa_accuracy(argmax(&probs), &ex.annotators)?;
                ce[i][k] = -probs[ex.answer].max(LOG_EPS).ln();
            }
        }
    }
    let n = examples.len() as f64;
    let mut report = EvalReport {
        accuracy: vec![0.0; k_measure],
        loss: vec![0.0; k_measure],
        examples: examples.len(),
    };
    for k in 0..k_measure {
        report.accuracy[k] = acc.iter().map(|row| row[k]).sum::<f64>() / n;
        report.loss[k] = ce.iter().map(|row| row[k]).sum::<f64>() / n;
    }
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where `checkpoint-best.rauc` and `checkpoint-last.rauc` are written
    /// after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Print a one-line summary per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub model: RauModel,
    /// Parameters from the epoch with the highest unit-1 validation accuracy.
    pub best: RauModel,
    pub best_epoch: usize,
    pub best_val_unit1: f64,
    pub metrics: Vec<MetricsRow>,
    pub events: Vec<StopEvent>,
    pub epochs_run: usize,
    pub early_stop: EarlyStopState,
}

/// Joint multi-step training with progressive early stopping.
///
/// Each epoch shuffles the training set, trains on the active units only
/// (unrolling up to the last active one), then measures all K units on the
/// validation split and on the first `train_eval_size` training examples,
/// applies the early-stop rule and saves checkpoints. Training ends after
/// `t_max` epochs or once unit-1 validation accuracy has stalled for
/// `saturation_patience` epochs.
pub fn run_training(
    mut model: RauModel,
    train: &[QAExample],
    val: &[QAExample],
    config: &TrainConfig,
    options: &RunOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("run_training: empty train or validation split"));
    }
    let k = config.k;
    let stops = match config.early_stop {
        EarlyStopMode::Formula => Some(schedule_stop_epochs(config.t_min, config.t_max, config.lambda, k)?),
        _ => None,
    };
    let mut shuffle_rng = SeededRng::stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = SeededRng::stream(config.seed, STREAM_DROPOUT);
    let mut noise_rng = SeededRng::stream(config.seed, STREAM_NOISE);
    let mut opt = OptimizerState::new(&model.params);
    let mut stop_state = EarlyStopState::new(k);
    let train_eval = &train[..config.train_eval_size.clamp(1, train.len())];

    let mut metrics = Vec::new();
    let mut events = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val_unit1 = f64::NEG_INFINITY;
    let mut plateau_best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=config.t_max {
        let lr = decay_learning_rates(config, epoch - 1);
        let active = stop_state.active_mask();
        let depth = stop_state.unroll_depth();
        shuffle_rng.shuffle(&mut order);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut batch: Vec<&QAExample> = batch.iter().map(|&i| &train[i]).collect();
            batch.sort_by_key(|ex| ex.question.len());
            train_batch(
                &mut model,
                &batch,
                &active[..depth],
                config,
                lr,
                &mut opt,
                &mut dropout_rng,
                &mut noise_rng,
            )
            .map_err(|e| match e {
                // a NaN inside the forward pass surfaces as a domain error
                Error::Divergence { .. } | Error::Domain { .. } => Error::Divergence { epoch, batch: b + 1 },
                other => other,
            })?;
        }
        epochs_run = epoch;

        let val_rep = evaluate_split(&model, val, k)?;
        let train_rep = evaluate_split(&model, train_eval, k)?;
        for unit in 0..k {
            for (split, rep) in [(Split::Train, &train_rep), (Split::Val, &val_rep)] {
                metrics.push(MetricsRow {
                    epoch,
                    unit: unit + 1,
                    split,
                    loss: rep.loss[unit],
                    accuracy: rep.accuracy[unit],
                    active: active[unit],
                    lr_enc: lr.encoder,
                    lr_ans: lr.answering,
                });
            }
        }

        let new_events = match (config.early_stop, &stops) {
            (EarlyStopMode::Validation, _) => update_validation_early_stop(
                &mut stop_state,
                &val_rep.accuracy,
                epoch,
                config.val_drop_threshold / 100.0,
            )?,
            (EarlyStopMode::Formula, Some(stops)) => stop_state.apply_schedule(stops, &val_rep.accuracy, epoch),
            _ => Vec::new(),
        };
        events.extend(new_events);

        let unit1 = val_rep.accuracy[0];
        if unit1 > best_val_unit1 {
            best_val_unit1 = unit1;
            best_epoch = epoch;
            best = model.clone();
        }
        if let Some(dir) = &options.checkpoint_dir {
            if best_epoch == epoch {
                checkpoint::save(&best, &dir.join("checkpoint-best.rauc"))?;
            }
            checkpoint::save(&model, &dir.join("checkpoint-last.rauc"))?;
        }
        if options.verbose {
            eprintln!(
                "epoch {epoch}: val {:?} train {:?} active {:?}",
                val_rep.accuracy.iter().map(|a| format!("{:.4}", a)).collect::<Vec<_>>(),
                train_rep.accuracy.iter().map(|a| format!("{:.4}", a)).collect::<Vec<_>>(),
                stop_state.active_mask()
            );
        }

        if unit1 >= plateau_best + SATURATION_GAIN - 1e-12 {
            plateau_best = unit1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.saturation_patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        best_val_unit1,
        metrics,
        events,
        epochs_run,
        early_stop: stop_state,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut RauModel,
    batch: &[&QAExample],
    active: &[bool],
    config: &TrainConfig,
    lr: LearningRates,
    opt: &mut OptimizerState,
    dropout_rng: &mut SeededRng,
    noise_rng: &mut SeededRng,
) -> Result<f64> {
    let maps: Vec<&Tensor> = batch.iter().map(|ex| &ex.features).collect();
    let qs: Vec<&[usize]> = batch.iter().map(|ex| ex.question.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|ex| ex.answer).collect();
    let stacked = stack_feature_maps(&maps)?;
    let mut g = Graph::new();
    let mut dropout = if config.dropout_rate > 0.0 {
        Dropout::On {
            rate: config.dropout_rate,
            rng: dropout_rng,
        }
    } else {
        Dropout::Off
    };
    let steps = forward(&mut g, model, &stacked, &qs, active.len(), &mut dropout)?;
    let loss = joint_loss_graph(&mut g, &steps, &labels, active)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0 });
    }
    let grads = g.backward(loss)?;
    let mut grads = collect_grads(&model.params, &grads);
    add_gradient_noise(&mut grads, opt.step, config.noise_eta, noise_rng);
    clip_gradients(&mut grads, config.clip_norm);
    adam_step(&mut model.params, &grads, opt, lr)?;
    Ok(value)
}
