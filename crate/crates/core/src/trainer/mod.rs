//! A toy per-pixel network trained by SGD on sampled anchors, plus a
//! quadratic testbed with controlled gradient noise.

mod loss;
mod metrics;
mod model;
mod pretrain;
mod quadratic;
mod sgd;

pub use loss::{
    global_embedding, grad_total_loss, inst_loss_with_grad, Batch, LossEval, LossState, Objective,
};
pub use metrics::{dice, dice_per_class};
pub use model::{ModelShape, PixelOutput, ToyModel};
pub use pretrain::{pretrain, PretrainConfig};
pub use quadratic::{
    average_grad_sq, fit_rate, noise_controlled_descent, quadratic_run, rate_fits, slope,
    steps_to_threshold, NoiseSweepRow, QuadraticConfig,
};
pub use sgd::{
    estimate_gradient_noise, estimate_smoothness, plan_step_size, sgd_fit, sgd_train, AnchorPolicy,
    ConvergenceConfig, EvalPoint, ProbeConfig, StepPlan, StepRecord, StepRule, TrainData, TrajectoryLog,
    TRAJECTORY_HEADER,
};
