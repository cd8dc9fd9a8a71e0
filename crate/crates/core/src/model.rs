//! A complete dynamic scene: canonical Gaussians, superpoints, motion
//! networks and the optional deformation cache.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::deform::{apply_residuals, build_deformation_cache, deform_cloud, DeformNet, DeformationCache, NonRigidNet};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::rasterizer::{canonical_buffers, render, GaussianView, RenderSettings, Rendered};
use crate::scene::{Camera, GaussianCloud};
use crate::superpoint::SuperpointModel;

/// How superpoint transforms are obtained at render time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderPath {
    /// Evaluate the deformation network.
    Network,
    /// Interpolate the per-timestep cache.
    Interp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpgsModel {
    pub cloud: GaussianCloud,
    pub superpoints: Option<SuperpointModel>,
    pub deform: Option<DeformNet>,
    pub nonrigid: Option<NonRigidNet>,
    /// Sorted distinct training timesteps.
    pub train_times: Vec<f64>,
    pub cache: Option<DeformationCache>,
    pub active_sh_degree: usize,
}

impl SpgsModel {
    /// Static model: no superpoints or networks yet.
    pub fn from_cloud(cloud: GaussianCloud, train_times: Vec<f64>) -> Self {
        let active_sh_degree = cloud.sh_degree;
        Self { cloud, superpoints: None, deform: None, nonrigid: None, train_times, cache: None, active_sh_degree }
    }

    pub fn is_dynamic(&self) -> bool {
        self.superpoints.is_some()
    }

    pub fn canonical(&self) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
        canonical_buffers(&self.cloud)
    }

    pub fn view<'a>(&'a self, positions: &'a [Vector3<f64>], rotations: &'a [Matrix3<f64>]) -> GaussianView<'a> {
        let mut v = GaussianView::new(&self.cloud, positions, rotations);
        v.active_sh_degree = self.active_sh_degree.min(self.cloud.sh_degree);
        v
    }

    pub fn assignment(&self) -> Result<Vec<u32>> {
        Ok(self.superpoints()?.assignment())
    }

    pub fn superpoints(&self) -> Result<&SuperpointModel> {
        self.superpoints.as_ref().ok_or_else(|| Error::Model("model has no superpoints".into()))
    }

    /// Superpoint transforms at time `t`.
    pub fn superpoint_transforms(&self, t: f64, path: RenderPath) -> Result<Vec<RigidTransform>> {
        match path {
            RenderPath::Network => {
                let net = self.deform.as_ref().ok_or_else(|| Error::Model("model has no deformation network".into()))?;
                Ok(net.predict(&self.superpoints()?.positions, t))
            }
            RenderPath::Interp => {
                let cache = self.cache.as_ref().ok_or_else(|| Error::Model("model has no deformation cache".into()))?;
                Ok(cache.at(t))
            }
        }
    }

    /// Gaussians moved by the given superpoint transforms (and the residual
    /// network, when present).
    pub fn deformed_with(&self, transforms: &[RigidTransform], t: f64) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
        let (pos, rot) = self.canonical()?;
        let assign = self.assignment()?;
        let (pos, rot) = deform_cloud(&pos, &rot, transforms, &assign);
        match &self.nonrigid {
            Some(g) => {
                let residual = g.predict(&pos, t);
                Ok(apply_residuals(&pos, &rot, &residual))
            }
            None => Ok((pos, rot)),
        }
    }

    /// Gaussian centers and rotations at time `t`.
    pub fn deformed(&self, t: f64, path: RenderPath) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
        if !self.is_dynamic() {
            return self.canonical();
        }
        let transforms = self.superpoint_transforms(t, path)?;
        self.deformed_with(&transforms, t)
    }

    pub fn render(
        &self,
        cam: &Camera,
        t: f64,
        path: RenderPath,
        background: &Vector3<f64>,
        settings: &RenderSettings,
    ) -> Result<Rendered> {
        let (pos, rot) = self.deformed(t, path)?;
        Ok(render(&self.view(&pos, &rot), cam, background, settings))
    }

    /// Precompute superpoint transforms at every training timestep.
    pub fn build_cache(&mut self) -> Result<()> {
        let net = self.deform.as_ref().ok_or_else(|| Error::Model("model has no deformation network".into()))?;
        let cache = build_deformation_cache(net, &self.superpoints()?.positions, &self.train_times)?;
        self.cache = Some(cache);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        if let Some(sp) = &self.superpoints {
            sp.validate()?;
            if sp.num_gaussians() != self.cloud.len() {
                return Err(Error::Model("association rows do not match Gaussian count".into()));
            }
        }
        if let Some(cache) = &self.cache {
            if let Some(sp) = &self.superpoints {
                if cache.superpoints() != sp.len() {
                    return Err(Error::Model("cache does not match superpoint count".into()));
                }
            }
        }
        Ok(())
    }
}
