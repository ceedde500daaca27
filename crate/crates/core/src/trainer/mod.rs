//! Joint multi-step training with progressive early stopping.

mod config;
mod early_stop;
mod loss;
mod optim;
mod run;

pub use config::{EarlyStopMode, TrainConfig};
pub use early_stop::{
    schedule_stop_epochs, update_validation_early_stop, EarlyStopState, StopEvent, Trigger,
    UnitStatus,
};
pub use loss::{cross_entropy, joint_loss, joint_loss_graph, vqa_accuracy};
pub use optim::{
    adam_step, add_gradient_noise, clip_gradients, collect_grads, decay_learning_rates,
    global_norm, noise_std, LearningRates, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use run::{
    evaluate_split, init_model, metrics_csv, run_training, EvalReport, MetricsRow, RunOptions,
    Split, TrainOutcome, METRICS_HEADER,
};
