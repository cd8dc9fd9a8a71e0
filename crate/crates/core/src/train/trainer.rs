//! The SP-GS training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{exp_lr, Adam, GaussianAdam};
use super::config::TrainConfig;
use super::density::{densify_and_prune, reset_opacity, DensifyParams, DensityStats};
use super::objective::{evaluate, LossBreakdown, LossWeights, ModelGrads, Stage};
use crate::deform::DeformNet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::model::{RenderPath, SpgsModel};
use crate::rasterizer::RenderSettings;
use crate::scene::{Dataset, Frame, GaussianCloud};
use crate::superpoint::SuperpointModel;

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iter: usize,
    pub warmup: bool,
    pub total: f64,
    pub image: f64,
    pub position: f64,
    pub rotation: f64,
    pub translation: f64,
    pub gaussians: usize,
}

impl LossRecord {
    fn new(iter: usize, warmup: bool, l: &LossBreakdown, gaussians: usize) -> Self {
        Self {
            iter,
            warmup,
            total: l.total,
            image: l.image,
            position: l.position,
            rotation: l.rotation,
            translation: l.translation,
            gaussians,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<LossRecord>,
    /// `(iteration, mean held-out PSNR)`.
    pub test_psnr: Vec<(usize, f64)>,
}

/// Learning rates for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub scaling: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
    pub logits: f64,
    pub deform: f64,
    pub nonrigid: f64,
}

/// Optimizer state for every trainable tensor of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub gaussians: GaussianAdam,
    pub deform: Option<Adam>,
    pub nonrigid: Option<Adam>,
}

impl Optimizers {
    pub fn for_model(model: &SpgsModel) -> Self {
        let mut gaussians = GaussianAdam::new(model.cloud.len(), model.cloud.sh_stride());
        if let Some(sp) = &model.superpoints {
            gaussians.enable_logits(sp.k);
        }
        Self {
            gaussians,
            deform: model.deform.as_ref().map(|n| Adam::new(n.mlp.params.len())),
            nonrigid: model.nonrigid.as_ref().map(|n| Adam::new(n.mlp.params.len())),
        }
    }

    /// Apply one Adam step. Tensors with an empty gradient are left alone.
    pub fn step(&mut self, model: &mut SpgsModel, grads: &ModelGrads, lr: &LearningRates) {
        let g = &mut self.gaussians;
        let c = &mut model.cloud;
        if !grads.positions.is_empty() {
            g.positions.step(&mut c.positions, &grads.positions, lr.position);
            g.log_scales.step(&mut c.log_scales, &grads.log_scales, lr.scaling);
            g.rotations.step(&mut c.rotations, &grads.rotations, lr.rotation);
            g.opacity_logits.step(&mut c.opacity_logits, &grads.opacity_logits, lr.opacity);
            let stride = c.sh_stride();
            let (dc, rest) = (lr.sh, lr.sh / 20.0);
            g.sh.step_by(&mut c.sh, &grads.sh, |i| if i % stride < 3 { dc } else { rest });
        }
        if let (Some(sp), Some(adam)) = (&mut model.superpoints, &mut g.logits) {
            if !grads.logits.is_empty() {
                adam.step(&mut sp.logits, &grads.logits, lr.logits);
            }
        }
        if let (Some(net), Some(adam)) = (&mut model.deform, &mut self.deform) {
            if !grads.deform.is_empty() {
                adam.step(&mut net.mlp.params, &grads.deform, lr.deform);
            }
        }
        if let (Some(net), Some(adam)) = (&mut model.nonrigid, &mut self.nonrigid) {
            if !grads.nonrigid.is_empty() {
                adam.step(&mut net.mlp.params, &grads.nonrigid, lr.nonrigid);
            }
        }
    }
}

/// Mean PSNR of `model` over the frames that carry images.
pub fn mean_psnr(model: &SpgsModel, frames: &[Frame], dataset: &Dataset, settings: &RenderSettings, path: RenderPath) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for f in frames {
        if let Some(gt) = &f.image {
            let r = model.render(&f.camera, f.time, path, &dataset.background, settings)?;
            sum += psnr(&r.output.image, gt)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Dataset("no frames with images".into()));
    }
    Ok(sum / n as f64)
}

/// Frames in a fresh random order every epoch.
pub(crate) struct FrameSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl FrameSampler {
    pub(crate) fn new(count: usize, seed: u64) -> Self {
        Self { order: (0..count).collect(), cursor: count, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub(crate) fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

pub(crate) fn supervised_frames(dataset: &Dataset) -> Result<Vec<(&Frame, &Image)>> {
    let frames: Vec<(&Frame, &Image)> = dataset.train.iter().filter_map(|f| f.image.as_ref().map(|i| (f, i))).collect();
    if frames.len() < 2 {
        return Err(Error::Dataset("need at least 2 training frames with images".into()));
    }
    Ok(frames)
}

/// Seed superpoints from the canonical cloud and attach a zero-output
/// deformation network.
pub fn attach_superpoints(model: &mut SpgsModel, config: &TrainConfig) -> Result<()> {
    let (pos, _) = model.canonical()?;
    let m = config.superpoints.min(pos.len());
    let k = config.knn.min(m);
    model.superpoints = Some(SuperpointModel::initialize(&pos, m, k)?);
    model.deform = Some(DeformNet::new(config.deform_net, config.seed ^ 0x5350_4753));
    Ok(())
}

/// Train canonical Gaussians, superpoints and the deformation network.
/// `observer` sees every loss record as it is produced.
pub fn train_spgs(
    dataset: &Dataset,
    config: &TrainConfig,
    init: GaussianCloud,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<(SpgsModel, TrainLog)> {
    config.validate()?;
    init.validate()?;
    let frames = supervised_frames(dataset)?;
    let extent = dataset.extent();
    let mut model = SpgsModel::from_cloud(init, dataset.train_times.clone());
    model.active_sh_degree = 0;
    let mut opt = Optimizers::for_model(&model);
    let mut stats = DensityStats::new(model.cloud.len());
    let mut sampler = FrameSampler::new(frames.len(), config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut log = TrainLog::default();
    let warmup_end = if config.warmup { config.warmup_iters } else { 0 };
    let mut last_refresh = 0;

    for iter in 1..=config.total_iters {
        let warm = iter <= warmup_end;
        if !warm && !model.is_dynamic() {
            attach_superpoints(&mut model, config)?;
            opt.gaussians.enable_logits(model.superpoints()?.k);
            opt.deform = Some(Adam::new(model.deform.as_ref().expect("attached").mlp.params.len()));
            last_refresh = iter;
            log::info!("iteration {iter}: {} superpoints initialized", model.superpoints()?.len());
        }
        if iter % config.sh_increase_interval == 0 {
            model.active_sh_degree = (model.active_sh_degree + 1).min(model.cloud.sh_degree);
        }
        if model.is_dynamic() {
            let (pos, _) = model.canonical()?;
            let sp = model.superpoints.as_mut().expect("dynamic");
            if iter - last_refresh >= config.knn_refresh_interval {
                sp.refresh_neighbors(&pos)?;
                last_refresh = iter;
            }
            sp.update_canonical_positions(&pos);
        }

        let (frame, target) = frames[sampler.next_index()];
        let stage = if warm { Stage::Canonical } else { Stage::Deformed };
        let eval = evaluate(
            &model,
            &frame.camera,
            frame.time,
            target,
            &dataset.background,
            &config.render,
            &config.weights,
            stage,
            None,
        )?;

        let lr = LearningRates {
            position: exp_lr(
                config.position_lr_init * extent,
                config.position_lr_final * extent,
                iter as f64 / config.position_lr_max_steps as f64,
            ),
            scaling: config.scaling_lr,
            rotation: config.rotation_lr,
            opacity: config.opacity_lr,
            sh: config.sh_lr,
            logits: config.logit_lr,
            deform: exp_lr(config.deform_lr_init, config.deform_lr_final, iter as f64 / config.total_iters as f64),
            nonrigid: 0.0,
        };
        if iter < config.densify_until {
            stats.update(&eval.grads.mean2d_ndc, &eval.grads.radii);
        }
        opt.step(&mut model, &eval.grads, &lr);

        if iter < config.densify_until {
            if iter > config.densify_from && iter % config.densify_interval == 0 {
                let params = DensifyParams {
                    grad_threshold: config.densify_grad_threshold,
                    percent_dense: config.percent_dense,
                    extent,
                    min_opacity: config.prune_opacity,
                    max_screen_size: (iter > config.opacity_reset_interval).then_some(config.max_screen_size),
                };
                let report = densify_and_prune(&mut model, &mut opt.gaussians, &mut stats, &params, &mut rng);
                log::debug!("iteration {iter}: {report:?}, {} Gaussians", model.cloud.len());
                if model.is_dynamic() {
                    let (pos, _) = model.canonical()?;
                    model.superpoints.as_mut().expect("dynamic").refresh_neighbors(&pos)?;
                    last_refresh = iter;
                }
            }
            if iter % config.opacity_reset_interval == 0 {
                reset_opacity(&mut model, &mut opt.gaussians, 0.01);
            }
        }

        let record = LossRecord::new(iter, warm, &eval.loss, model.cloud.len());
        observer(&record);
        log.losses.push(record);
        if config.test_interval > 0 && iter % config.test_interval == 0 && !dataset.test.is_empty() {
            let path = RenderPath::Network;
            let value = mean_psnr(&model, &dataset.test, dataset, &config.render, path)?;
            log::info!("iteration {iter}: test PSNR {value:.2} dB");
            log.test_psnr.push((iter, value));
        }
    }

    if !model.is_dynamic() {
        attach_superpoints(&mut model, config)?;
    }
    let (pos, _) = model.canonical()?;
    model.superpoints.as_mut().expect("dynamic").update_canonical_positions(&pos);
    model.build_cache()?;
    model.validate()?;
    Ok((model, log))
}

/// Settings of the residual-network refinement stage.
#[derive(Clone, Debug, PartialEq)]
pub struct NonRigidConfig {
    pub iters: usize,
    pub net: crate::deform::NetConfig,
    pub dssim: f64,
    pub seed: u64,
    pub render: RenderSettings,
}

impl Default for NonRigidConfig {
    fn default() -> Self {
        Self {
            iters: 20_000,
            net: crate::deform::NetConfig::nonrigid(),
            dssim: 0.2,
            seed: 0,
            render: RenderSettings::default(),
        }
    }
}

/// Add a zero-output residual network to a trained model and optimize
/// everything with the image loss alone. Gaussian, association and
/// deformation-network parameters continue at their end-of-training rates;
/// the residual network follows the 1e-3 → 1e-5 schedule.
pub fn train_nonrigid_stage(
    mut model: SpgsModel,
    dataset: &Dataset,
    train: &TrainConfig,
    config: &NonRigidConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<(SpgsModel, TrainLog)> {
    model.superpoints()?;
    if model.deform.is_none() {
        return Err(Error::Model("model has no deformation network".into()));
    }
    let frames = supervised_frames(dataset)?;
    let extent = dataset.extent();
    model.nonrigid = Some(DeformNet::new(config.net, config.seed ^ 0x4e47));
    model.cache = None;
    let mut opt = Optimizers::for_model(&model);
    let mut sampler = FrameSampler::new(frames.len(), config.seed);
    let weights = LossWeights { dssim: config.dssim, ..LossWeights::default() }.image_only();
    let mut log = TrainLog::default();
    for iter in 1..=config.iters {
        let (frame, target) = frames[sampler.next_index()];
        let eval = evaluate(
            &model,
            &frame.camera,
            frame.time,
            target,
            &dataset.background,
            &config.render,
            &weights,
            Stage::Deformed,
            None,
        )?;
        let lr = LearningRates {
            position: train.position_lr_final * extent,
            scaling: train.scaling_lr,
            rotation: train.rotation_lr,
            opacity: train.opacity_lr,
            sh: train.sh_lr,
            logits: train.logit_lr,
            deform: train.deform_lr_final,
            nonrigid: exp_lr(train.deform_lr_init, train.deform_lr_final, iter as f64 / config.iters as f64),
        };
        opt.step(&mut model, &eval.grads, &lr);
        let record = LossRecord::new(iter, false, &eval.loss, model.cloud.len());
        observer(&record);
        log.losses.push(record);
    }
    let (pos, _) = model.canonical()?;
    model.superpoints.as_mut().expect("checked").update_canonical_positions(&pos);
    model.build_cache()?;
    Ok((model, log))
}
