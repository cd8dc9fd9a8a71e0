//! Superpoint-level scene edits: delete, rigidly transform, merge scenes.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::checkpoint::load_checkpoint;
use crate::deform::DeformationCache;
use crate::error::{Error, Result};
use crate::geom::{AxisAngle, Quat, RigidTransform};
use crate::model::SpgsModel;
use crate::superpoint::SuperpointModel;

/// One edit operation. Ids are superpoint indices at the time the
/// operation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum EditOp {
    /// Remove the listed superpoints and every Gaussian assigned to them.
    Delete { ids: Vec<usize> },
    /// Move the listed superpoints and their Gaussians in canonical space.
    Transform {
        ids: Vec<usize>,
        #[serde(default)]
        rotation: [f64; 3],
        #[serde(default)]
        translation: [f64; 3],
    },
    /// Append another checkpoint, placed by the given offset.
    Merge {
        path: PathBuf,
        #[serde(default)]
        rotation: [f64; 3],
        #[serde(default)]
        translation: [f64; 3],
    },
}

pub type EditScript = Vec<EditOp>;

pub fn parse_edit_script(text: &str) -> Result<EditScript> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_edit_script(path: &Path) -> Result<EditScript> {
    parse_edit_script(&std::fs::read_to_string(path)?)
}

/// Apply `script` in order. Relative merge paths resolve against `base_dir`.
pub fn apply_edit_script(model: &SpgsModel, script: &[EditOp], base_dir: &Path) -> Result<SpgsModel> {
    let mut out = model.clone();
    for op in script {
        match op {
            EditOp::Delete { ids } => delete_superpoints(&mut out, ids)?,
            EditOp::Transform { ids, rotation, translation } => {
                let e = RigidTransform::new(Vector3::from(*rotation), Vector3::from(*translation));
                transform_superpoints(&mut out, ids, &e)?
            }
            EditOp::Merge { path, rotation, translation } => {
                let other = load_checkpoint(&base_dir.join(path))?;
                let e = RigidTransform::new(Vector3::from(*rotation), Vector3::from(*translation));
                out = merge_models(&out, &other, &e)?;
            }
        }
    }
    Ok(out)
}

fn check_ids(ids: &[usize], m: usize) -> Result<Vec<bool>> {
    let mut listed = vec![false; m];
    for &j in ids {
        *listed.get_mut(j).ok_or(Error::UnknownSuperpoint(j))? = true;
    }
    Ok(listed)
}

fn rotation_quat(w: &AxisAngle) -> Quat {
    let theta = w.angle();
    if theta == 0.0 {
        return Quat::IDENTITY;
    }
    let s = (0.5 * theta).sin() / theta;
    Quat::new((0.5 * theta).cos(), w.0.x * s, w.0.y * s, w.0.z * s)
}

fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a.to_array();
    let [bw, bx, by, bz] = b.to_array();
    Quat::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

/// Remove superpoints `ids` and their member Gaussians. Surviving Gaussians
/// keep their remaining neighbors and logits; freed slots are refilled with
/// the nearest remaining superpoints at a logit below the row minimum, so
/// hard assignments are unchanged.
pub fn delete_superpoints(model: &mut SpgsModel, ids: &[usize]) -> Result<()> {
    let sp = model.superpoints()?;
    let m = sp.len();
    let doomed = check_ids(ids, m)?;
    if doomed.iter().all(|&d| d) {
        return Err(Error::EmptyScene);
    }
    let assign = sp.assignment();
    let keep_g: Vec<bool> = assign.iter().map(|&j| !doomed[j as usize]).collect();
    if !keep_g.contains(&true) {
        return Err(Error::EmptyScene);
    }

    let mut new_id = vec![u32::MAX; m];
    let mut positions = Vec::new();
    for j in 0..m {
        if !doomed[j] {
            new_id[j] = positions.len() as u32;
            positions.push(sp.positions[j]);
        }
    }
    let k_old = sp.k;
    let k = k_old.min(positions.len());
    let mut neighbors = Vec::new();
    let mut logits = Vec::new();
    for i in (0..keep_g.len()).filter(|&i| keep_g[i]) {
        let row = &sp.neighbors[i * k_old..(i + 1) * k_old];
        let row_logits = &sp.logits[i * k_old..(i + 1) * k_old];
        let mut slots: Vec<(u32, f64)> =
            row.iter().zip(row_logits).filter(|(&j, _)| !doomed[j as usize]).map(|(&j, &l)| (new_id[j as usize], l)).collect();
        if slots.len() < k {
            let fill = slots.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) - 10.0;
            let mu = model.cloud.position(i);
            let mut by_dist: Vec<usize> = (0..positions.len()).collect();
            by_dist.sort_by(|&a, &b| (positions[a] - mu).norm_squared().total_cmp(&(positions[b] - mu).norm_squared()));
            for j in by_dist {
                if slots.len() == k {
                    break;
                }
                if !slots.iter().any(|s| s.0 == j as u32) {
                    slots.push((j as u32, fill));
                }
            }
        }
        neighbors.extend(slots.iter().map(|s| s.0));
        logits.extend(slots.iter().map(|s| s.1));
    }

    model.cloud.retain(&keep_g);
    model.superpoints = Some(SuperpointModel { positions, neighbors, logits, k });
    if let Some(cache) = &mut model.cache {
        for row in &mut cache.transforms {
            let kept: Vec<RigidTransform> = row.iter().zip(&doomed).filter(|(_, &d)| !d).map(|(t, _)| *t).collect();
            *row = kept;
        }
    }
    Ok(())
}

/// Pre-compose `e` onto the canonical centers and orientations of the
/// Gaussians assigned to `ids` and onto those superpoint positions.
pub fn transform_superpoints(model: &mut SpgsModel, ids: &[usize], e: &RigidTransform) -> Result<()> {
    let sp = model.superpoints()?;
    let listed = check_ids(ids, sp.len())?;
    let assign = sp.assignment();
    let r = e.rotation_matrix();
    let qe = rotation_quat(&e.rotation);
    for (i, &j) in assign.iter().enumerate() {
        if listed[j as usize] {
            let p = r * model.cloud.position(i) + e.translation;
            model.cloud.set_position(i, &p);
            let q = quat_mul(qe, model.cloud.rotation(i));
            model.cloud.set_rotation(i, q);
        }
    }
    let sp = model.superpoints.as_mut().expect("checked above");
    for (p, _) in sp.positions.iter_mut().zip(&listed).filter(|(_, &l)| l) {
        *p = r * *p + e.translation;
    }
    Ok(())
}

/// Conjugate a superpoint motion by a placement `e`: the motion of a part
/// moved by `e` is `e ∘ d ∘ e⁻¹`.
fn conjugate(e: &RigidTransform, e_inv: &RigidTransform, d: &RigidTransform) -> Result<RigidTransform> {
    e.compose(&d.compose(e_inv)?)
}

/// Concatenate `b`, placed by `e`, after `a`. Both models need a
/// deformation cache; the result moves by interpolation only, over the
/// union of both timestep sets. The placed motion is exact at those
/// timesteps.
pub fn merge_models(a: &SpgsModel, b: &SpgsModel, e: &RigidTransform) -> Result<SpgsModel> {
    if a.nonrigid.is_some() || b.nonrigid.is_some() {
        return Err(Error::Model("cannot merge models with a residual network".into()));
    }
    let (sa, sb) = (a.superpoints()?, b.superpoints()?);
    let no_cache = || Error::Model("merging requires a deformation cache on both models".into());
    let (ca, cb) = (a.cache.as_ref().ok_or_else(no_cache)?, b.cache.as_ref().ok_or_else(no_cache)?);

    let mut placed = b.clone();
    let all: Vec<usize> = (0..sb.len()).collect();
    transform_superpoints(&mut placed, &all, e)?;
    let sb = placed.superpoints()?;

    let mut cloud = a.cloud.clone();
    cloud.append(&placed.cloud)?;

    let mut times: Vec<f64> = ca.times.iter().chain(&cb.times).copied().collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let e_inv = e.inverse();
    let transforms = times
        .iter()
        .map(|&t| -> Result<Vec<RigidTransform>> {
            let mut row = ca.at(t);
            for d in cb.at(t) {
                row.push(conjugate(e, &e_inv, &d)?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let offset = sa.len() as u32;
    let mut positions = sa.positions.clone();
    positions.extend_from_slice(&sb.positions);
    let k = sa.k.max(sb.k);
    let mut neighbors = Vec::with_capacity(cloud.len() * k);
    let mut logits = Vec::with_capacity(cloud.len() * k);
    let rows = (0..sa.num_gaussians())
        .map(|i| (sa, 0, i, a.cloud.position(i)))
        .chain((0..sb.num_gaussians()).map(|i| (sb, offset, i, placed.cloud.position(i))));
    for (sp, off, i, mu) in rows {
        let mut slots: Vec<(u32, f64)> = (0..sp.k).map(|s| (sp.neighbors[i * sp.k + s] + off, sp.logits[i * sp.k + s])).collect();
        if slots.len() < k {
            let fill = slots.iter().map(|s| s.1).fold(f64::INFINITY, f64::min) - 10.0;
            let mut by_dist: Vec<usize> = (0..positions.len()).collect();
            by_dist.sort_by(|&x, &y| (positions[x] - mu).norm_squared().total_cmp(&(positions[y] - mu).norm_squared()));
            for j in by_dist {
                if slots.len() == k {
                    break;
                }
                if !slots.iter().any(|s| s.0 == j as u32) {
                    slots.push((j as u32, fill));
                }
            }
        }
        neighbors.extend(slots.iter().map(|s| s.0));
        logits.extend(slots.iter().map(|s| s.1));
    }

    let merged = SpgsModel {
        cloud,
        superpoints: Some(SuperpointModel { positions, neighbors, logits, k }),
        deform: None,
        nonrigid: None,
        cache: Some(DeformationCache::new(times.clone(), transforms)?),
        train_times: times,
        active_sh_degree: a.active_sh_degree.min(b.active_sh_degree),
    };
    merged.validate()?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RenderPath;
    use crate::rasterizer::RenderSettings;
    use crate::testutil::{front_camera, random_cloud, rng};
    use nalgebra::{Matrix4, Translation3};
    use rand::Rng;

    fn fixture(seed: u64, moving: bool) -> SpgsModel {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, 30, 1, 0.9);
        let times = vec![0.0, 0.5, 1.0];
        let mut model = SpgsModel::from_cloud(cloud, times.clone());
        let (pos, _) = model.canonical().unwrap();
        let mut sp = SuperpointModel::initialize(&pos, 4, 2).unwrap();
        for l in &mut sp.logits {
            *l = r.gen_range(-1.0..1.0);
        }
        model.superpoints = Some(sp);
        let transforms = times
            .iter()
            .map(|_| {
                (0..4)
                    .map(|_| {
                        if moving {
                            RigidTransform::new(
                                Vector3::from_fn(|_, _| r.gen_range(-0.2..0.2)),
                                Vector3::from_fn(|_, _| r.gen_range(-0.1..0.1)),
                            )
                        } else {
                            RigidTransform::identity()
                        }
                    })
                    .collect()
            })
            .collect();
        model.cache = Some(DeformationCache::new(times, transforms).unwrap());
        model
    }

    fn render(model: &SpgsModel, cam: &crate::scene::Camera, t: f64) -> crate::image::Image {
        model.render(cam, t, RenderPath::Interp, &Vector3::zeros(), &RenderSettings::default()).unwrap().output.image
    }

    #[test]
    fn parses_tagged_operations() {
        let script = parse_edit_script(
            r#"[{"op":"delete","ids":[1,2]},
                {"op":"transform","ids":[0],"translation":[1,0,0]},
                {"op":"merge","path":"other.ckpt","rotation":[0,0,0.5]}]"#,
        )
        .unwrap();
        assert_eq!(script[0], EditOp::Delete { ids: vec![1, 2] });
        assert_eq!(script[1], EditOp::Transform { ids: vec![0], rotation: [0.0; 3], translation: [1.0, 0.0, 0.0] });
        assert!(matches!(&script[2], EditOp::Merge { rotation, .. } if rotation[2] == 0.5));
        assert!(parse_edit_script(r#"[{"op":"explode"}]"#).is_err());
        assert!(parse_edit_script(r#"[{"op":"delete","ids":[0],"extra":1}]"#).is_err());
    }

    #[test]
    fn empty_script_is_identity() {
        let m = fixture(1, true);
        assert_eq!(apply_edit_script(&m, &[], Path::new(".")).unwrap(), m);
    }

    #[test]
    fn guards() {
        let m = fixture(2, true);
        let all = EditOp::Delete { ids: vec![0, 1, 2, 3] };
        assert!(matches!(apply_edit_script(&m, &[all], Path::new(".")), Err(Error::EmptyScene)));
        let bad = EditOp::Transform { ids: vec![4], rotation: [0.0; 3], translation: [0.0; 3] };
        assert!(matches!(apply_edit_script(&m, &[bad], Path::new(".")), Err(Error::UnknownSuperpoint(4))));
        let stat = SpgsModel::from_cloud(m.cloud.clone(), m.train_times.clone());
        assert!(delete_superpoints(&mut stat.clone(), &[0]).is_err());
    }

    #[test]
    fn delete_removes_members_and_keeps_the_rest() {
        let m = fixture(3, true);
        let before = m.assignment().unwrap();
        let mut edited = m.clone();
        delete_superpoints(&mut edited, &[1]).unwrap();
        edited.validate().unwrap();
        let survivors: Vec<usize> = (0..m.cloud.len()).filter(|&i| before[i] != 1).collect();
        assert_eq!(edited.cloud.len(), survivors.len());
        let sp = edited.superpoints().unwrap();
        assert_eq!(sp.len(), 3);
        let after = edited.assignment().unwrap();
        let old_sp = m.superpoints().unwrap();
        for (new_i, &old_i) in survivors.iter().enumerate() {
            assert_eq!(edited.cloud.position(new_i), m.cloud.position(old_i));
            assert_eq!(sp.positions[after[new_i] as usize], old_sp.positions[before[old_i] as usize]);
        }
        let cache = edited.cache.as_ref().unwrap();
        assert_eq!(cache.superpoints(), 3);
        assert_eq!(cache.transforms[1][1], m.cache.as_ref().unwrap().transforms[1][2]);
    }

    #[test]
    fn delete_shrinks_k_below_superpoint_count() {
        let mut m = fixture(4, false);
        delete_superpoints(&mut m, &[0, 2, 3]).unwrap_or_else(|e| {
            // All Gaussians may belong to the deleted ones for some seeds.
            assert!(matches!(e, Error::EmptyScene));
        });
        if m.superpoints().unwrap().len() == 1 {
            assert_eq!(m.superpoints().unwrap().k, 1);
            m.validate().unwrap();
        }
    }

    #[test]
    fn transform_then_inverse_restores() {
        let m = fixture(5, true);
        let e = RigidTransform::new(Vector3::new(0.3, -0.2, 0.5), Vector3::new(0.4, 0.1, -0.3));
        let inv = e.inverse();
        let script = [
            EditOp::Transform { ids: vec![0, 2], rotation: e.rotation.0.into(), translation: e.translation.into() },
            EditOp::Transform { ids: vec![0, 2], rotation: inv.rotation.0.into(), translation: inv.translation.into() },
        ];
        let back = apply_edit_script(&m, &script, Path::new(".")).unwrap();
        assert_eq!(back.assignment().unwrap(), m.assignment().unwrap());
        for i in 0..m.cloud.len() {
            assert!((back.cloud.position(i) - m.cloud.position(i)).amax() < 1e-9);
            let (a, b) = (back.cloud.rotation(i).to_array(), m.cloud.rotation(i).to_array());
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        let cam = front_camera(32, 32);
        for t in [0.0, 0.25, 1.0] {
            assert!(render(&back, &cam, t).max_abs_diff(&render(&m, &cam, t)) < 1.0 / 255.0);
        }
    }

    #[test]
    fn translating_everything_matches_moving_the_camera() {
        let m = fixture(6, false);
        let d = Vector3::new(0.2, -0.1, 0.3);
        let mut moved = m.clone();
        transform_superpoints(&mut moved, &[0, 1, 2, 3], &RigidTransform::new(Vector3::zeros(), d)).unwrap();
        for i in 0..m.cloud.len() {
            assert!((moved.cloud.position(i) - m.cloud.position(i) - d).amax() < 1e-12);
        }
        let cam = front_camera(32, 32);
        let mut shifted = cam.clone();
        shifted.world_to_camera = cam.world_to_camera * Matrix4::from(Translation3::from(-d));
        let a = render(&moved, &shifted, 0.5);
        let b = render(&m, &cam, 0.5);
        assert!(a.max_abs_diff(&b) < 1e-9);
        assert!(render(&moved, &cam, 0.5).max_abs_diff(&b) > 1e-3);
    }

    #[test]
    fn merge_places_the_second_scene_and_its_motion() {
        let a = fixture(7, true);
        let mut b = fixture(8, true);
        b.train_times = vec![0.0, 0.3, 1.0];
        let cb = b.cache.as_mut().unwrap();
        cb.times = b.train_times.clone();
        let e = RigidTransform::new(Vector3::new(0.0, 0.4, 0.0), Vector3::new(1.0, 0.0, 0.0));
        let merged = merge_models(&a, &b, &e).unwrap();
        assert_eq!(merged.train_times, vec![0.0, 0.3, 0.5, 1.0]);
        assert_eq!(merged.cloud.len(), 60);
        assert_eq!(merged.superpoints().unwrap().len(), 8);
        for t in [0.0, 0.3, 0.5, 1.0] {
            let (pm, _) = merged.deformed(t, RenderPath::Interp).unwrap();
            let (pa, _) = a.deformed(t, RenderPath::Interp).unwrap();
            let (pb, _) = b.deformed(t, RenderPath::Interp).unwrap();
            for i in 0..30 {
                assert!((pm[i] - pa[i]).amax() < 1e-12);
                assert!((pm[30 + i] - e.apply(&pb[i])).amax() < 1e-9, "t {t}");
            }
        }
        let mut no_cache = b.clone();
        no_cache.cache = None;
        assert!(merge_models(&a, &no_cache, &e).is_err());
    }

    #[test]
    fn merge_from_script_reads_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let a = fixture(9, true);
        super::super::save_checkpoint(&a, &dir.path().join("b.ckpt")).unwrap();
        let script = parse_edit_script(r#"[{"op":"merge","path":"b.ckpt","translation":[0,2,0]}]"#).unwrap();
        let merged = apply_edit_script(&a, &script, dir.path()).unwrap();
        assert_eq!(merged.cloud.len(), 60);
    }
}
