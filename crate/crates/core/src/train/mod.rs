//! Losses, augmentation, optimizer and the training loops.

mod ablate;
mod adam;
mod config;
mod data;
mod eval;
mod jitter;
mod losses;
mod run;

pub use adam::{Adam, AdamConfig, LrSchedule};
pub use config::{AlignMode, LossWeights, TrainConfig};
pub use data::{downsample_mask, plan_batch, prepare, realize, Crop, CropPlan, Prepared};
pub use jitter::{apply_jitter, color_jitter, hue_matrix, Jitter, LUMA, RGB_TO_YIQ};
pub use losses::{loss_color_predictor, loss_isp, loss_preprocess, loss_preprocess_with, PreprocessLoss, CONSTRAINT_BLUR};
pub use run::{
    checkpoint_weights, color_model, init_params, isp_model, train_color_predictor, train_isp, train_joint, LossParts,
    RunOptions, TrainEvent, TrainOutput,
};
pub use ablate::{fit_residual, run_ablation, synth_split, AblationConfig, AblationReport, AblationRow, Grid};
pub use eval::{evaluate, ground_truth, infer_sample, EvalColor};
