//! Optimization: objective, optimizer, densification and training loops.

pub mod adam;
pub mod config;
pub mod density;
pub mod distill;
pub mod init;
pub mod trainer;
pub mod objective;
pub mod pose;

pub use adam::{exp_lr, lr_schedule, Adam, GaussianAdam};
pub use config::{Profile, TrainConfig};
pub use objective::{evaluate, Evaluation, LossBreakdown, LossWeights, ModelGrads, Stage};
pub use trainer::{attach_superpoints, mean_psnr, train_nonrigid_stage, train_spgs, LossRecord, NonRigidConfig, Optimizers, TrainLog};
pub use distill::{distill, distillation_error, DistillConfig, DistillRecord};
pub use pose::{estimate_pose, initial_transforms, PoseConfig, PoseEstimate};
