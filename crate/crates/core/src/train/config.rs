//! Training hyper-parameters.

use serde::{Deserialize, Serialize};

use super::objective::LossWeights;
use crate::deform::NetConfig;
use crate::error::{Error, Result};
use crate::rasterizer::RenderSettings;

/// Densification schedule family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Densify every 100 iterations in [600, 15000], reset opacity every 3000.
    Synthetic,
    /// Densify every 1000 iterations in [1000, 15000], reset opacity every 6000.
    Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub warmup_iters: usize,
    /// Skip the static warm-up: superpoints and the network start at once.
    pub warmup: bool,
    pub superpoints: usize,
    pub knn: usize,
    pub sh_degree: usize,
    pub weights: LossWeights,
    pub deform_net: NetConfig,
    pub deform_lr_init: f64,
    pub deform_lr_final: f64,
    /// Multiplied by the scene extent.
    pub position_lr_init: f64,
    pub position_lr_final: f64,
    pub position_lr_max_steps: usize,
    pub scaling_lr: f64,
    pub rotation_lr: f64,
    pub opacity_lr: f64,
    /// DC coefficients; higher-order ones use a twentieth of it.
    pub sh_lr: f64,
    pub logit_lr: f64,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub opacity_reset_interval: usize,
    /// Threshold on the mean NDC-space gradient norm.
    pub densify_grad_threshold: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Screen-space radius (px) above which Gaussians are pruned after the
    /// first opacity reset.
    pub max_screen_size: f64,
    pub sh_increase_interval: usize,
    pub knn_refresh_interval: usize,
    /// Random initial Gaussians when the dataset has no point cloud.
    pub init_points: usize,
    /// Half side of the cube the random initial points are drawn from.
    pub init_extent: f64,
    /// Evaluate held-out PSNR every this many iterations (0 disables).
    pub test_interval: usize,
    pub seed: u64,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 40_000,
            warmup_iters: 3_000,
            warmup: true,
            superpoints: 300,
            knn: 5,
            sh_degree: 3,
            weights: LossWeights::default(),
            deform_net: NetConfig::superpoint(),
            deform_lr_init: 1e-3,
            deform_lr_final: 1e-5,
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            position_lr_max_steps: 30_000,
            scaling_lr: 5e-3,
            rotation_lr: 1e-3,
            opacity_lr: 5e-2,
            sh_lr: 2.5e-3,
            logit_lr: 5e-3,
            densify_from: 600,
            densify_until: 15_000,
            densify_interval: 100,
            opacity_reset_interval: 3_000,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_screen_size: 20.0,
            sh_increase_interval: 1_000,
            knn_refresh_interval: 100,
            init_points: 10_000,
            init_extent: 1.3,
            test_interval: 0,
            seed: 0,
            render: RenderSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_profile(mut self, profile: Profile) -> Self {
        match profile {
            Profile::Synthetic => {
                self.densify_from = 600;
                self.densify_until = 15_000;
                self.densify_interval = 100;
                self.opacity_reset_interval = 3_000;
            }
            Profile::Real => {
                self.densify_from = 1_000;
                self.densify_until = 15_000;
                self.densify_interval = 1_000;
                self.opacity_reset_interval = 6_000;
            }
        }
        self
    }

    /// Shrink or stretch every iteration-count schedule to `total`
    /// iterations, keeping their proportions. The densification interval
    /// and the SH/KNN cadences stay fixed.
    pub fn scaled_to(mut self, total: usize) -> Self {
        let f = total as f64 / self.total_iters as f64;
        let s = |v: usize| ((v as f64 * f).round() as usize).max(1);
        self.warmup_iters = s(self.warmup_iters);
        self.densify_from = s(self.densify_from);
        self.densify_until = s(self.densify_until);
        self.opacity_reset_interval = s(self.opacity_reset_interval);
        self.position_lr_max_steps = s(self.position_lr_max_steps);
        self.total_iters = total;
        self
    }

    pub fn without_property_losses(mut self) -> Self {
        self.weights = self.weights.image_only();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if self.warmup && self.warmup_iters >= self.total_iters {
            return Err(Error::Config("warm-up must be shorter than training".into()));
        }
        if [w.dssim, w.position, w.rotation, w.translation].iter().any(|&l| !(l >= 0.0)) || w.dssim > 1.0 {
            return Err(Error::Config("loss weights must be non-negative (and D-SSIM weight ≤ 1)".into()));
        }
        if self.superpoints == 0 || self.knn == 0 {
            return Err(Error::Config("superpoint and neighbor counts must be positive".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::Config("SH degree must be 0..=3".into()));
        }
        if self.densify_interval == 0 || self.knn_refresh_interval == 0 || self.sh_increase_interval == 0 {
            return Err(Error::Config("intervals must be positive".into()));
        }
        Ok(())
    }
}
