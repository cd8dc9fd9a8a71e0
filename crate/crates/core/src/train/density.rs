//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::GaussianAdam;
use crate::model::SpgsModel;
use crate::scene::{logit, sigmoid};

/// Per-Gaussian screen-space statistics accumulated between densification
/// events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStats {
    pub grad_accum: Vec<f64>,
    pub denom: Vec<f64>,
    pub max_radii: Vec<f64>,
}

impl DensityStats {
    pub fn new(count: usize) -> Self {
        Self { grad_accum: vec![0.0; count], denom: vec![0.0; count], max_radii: vec![0.0; count] }
    }

    /// Record one view: `mean2d_ndc` is the per-Gaussian NDC gradient norm,
    /// `radii` the screen radius (0 when not visible).
    pub fn update(&mut self, mean2d_ndc: &[f64], radii: &[f64]) {
        for i in 0..self.denom.len() {
            if radii[i] > 0.0 {
                self.grad_accum[i] += mean2d_ndc[i];
                self.denom[i] += 1.0;
                self.max_radii[i] = self.max_radii[i].max(radii[i]);
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.denom[i] > 0.0 {
            self.grad_accum[i] / self.denom[i]
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub percent_dense: f64,
    pub extent: f64,
    pub min_opacity: f64,
    /// Screen-radius pruning (and the world-size check that goes with it).
    pub max_screen_size: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Pruning would have emptied the cloud; the most opaque Gaussian was kept.
    pub guarded: bool,
}

/// Scale a split child gets relative to its parent.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

fn max_scale(model: &SpgsModel, i: usize) -> f64 {
    model.cloud.scale(i).max()
}

/// One densification event. Children copy their parent's association row;
/// optimizer moments of new rows start at zero. Resets `stats`.
pub fn densify_and_prune(
    model: &mut SpgsModel,
    opt: &mut GaussianAdam,
    stats: &mut DensityStats,
    params: &DensifyParams,
    rng: &mut impl Rng,
) -> DensifyReport {
    let n0 = model.cloud.len();
    let boundary = params.percent_dense * params.extent;
    let hot: Vec<bool> = (0..n0).map(|i| stats.mean_grad(i) >= params.grad_threshold).collect();
    let clone: Vec<usize> = (0..n0).filter(|&i| hot[i] && max_scale(model, i) <= boundary).collect();
    let split: Vec<usize> = (0..n0).filter(|&i| hot[i] && max_scale(model, i) > boundary).collect();
    let mut report = DensifyReport { cloned: clone.len(), split: split.len(), ..DensifyReport::default() };

    for &i in &clone {
        duplicate(model, i);
    }
    for &i in &split {
        let scale = model.cloud.scale(i);
        let rot = crate::geom::quat_to_rotmat(model.cloud.rotation(i)).expect("validated rotation");
        let mean = model.cloud.position(i);
        for _ in 0..2 {
            duplicate(model, i);
            let c = model.cloud.len() - 1;
            let z = Vector3::from_fn(|r, _| rng.sample::<f64, _>(StandardNormal) * scale[r]);
            model.cloud.set_position(c, &(rot * z + mean));
            for r in 0..3 {
                model.cloud.log_scales[c * 3 + r] = (scale[r] / SPLIT_SCALE_DIVISOR).ln();
            }
        }
    }
    let added = clone.len() + 2 * split.len();
    opt.push_zero_rows(added);
    stats.max_radii.resize(n0 + added, 0.0);

    let n = model.cloud.len();
    let mut keep = vec![true; n];
    for &i in &split {
        keep[i] = false;
    }
    for (i, k) in keep.iter_mut().enumerate() {
        let mut prune = model.cloud.opacity(i) < params.min_opacity;
        if let Some(limit) = params.max_screen_size {
            prune |= stats.max_radii[i] > limit || max_scale(model, i) > 0.1 * params.extent;
        }
        if prune {
            *k = false;
        }
    }
    if keep.iter().all(|k| !k) {
        let best = (0..n)
            .max_by(|&a, &b| model.cloud.opacity_logits[a].total_cmp(&model.cloud.opacity_logits[b]))
            .expect("non-empty");
        keep[best] = true;
        report.guarded = true;
        log::warn!("pruning would empty the cloud; keeping one Gaussian");
    }
    report.pruned = keep.iter().filter(|k| !**k).count() - split.len();
    model.cloud.retain(&keep);
    if let Some(sp) = &mut model.superpoints {
        sp.retain_gaussians(&keep);
    }
    opt.retain(&keep);
    *stats = DensityStats::new(model.cloud.len());
    report
}

fn duplicate(model: &mut SpgsModel, i: usize) {
    model.cloud.duplicate(i);
    if let Some(sp) = &mut model.superpoints {
        sp.duplicate_gaussian(i);
    }
}

/// Clamp every opacity to at most `ceiling` and clear the opacity moments.
pub fn reset_opacity(model: &mut SpgsModel, opt: &mut GaussianAdam, ceiling: f64) {
    for x in model.cloud.opacity_logits.iter_mut() {
        *x = logit(sigmoid(*x).min(ceiling));
    }
    opt.opacity_logits.reset();
}
