//! Per-timestep Gaussian centers and orientations of a teacher model.
//! Layout: `"SPTJ"`, version, `P`, `T`, `T` times, then for every time and
//! Gaussian the center (3) and quaternion (4), all little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::bin::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geom::Quat;
use crate::model::{RenderPath, SpgsModel};

pub const MAGIC: &[u8; 4] = b"SPTJ";
pub const VERSION: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub times: Vec<f64>,
    /// `positions[t][i]`.
    pub positions: Vec<Vec<Vector3<f64>>>,
    /// Unit quaternions, `rotations[t][i]`.
    pub rotations: Vec<Vec<Quat>>,
}

impl Trajectories {
    pub fn gaussians(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.gaussians();
        if self.positions.len() != self.times.len()
            || self.rotations.len() != self.times.len()
            || self.positions.iter().any(|v| v.len() != p)
            || self.rotations.iter().any(|v| v.len() != p)
        {
            return Err(Error::ShapeMismatch("trajectory arrays".into()));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Format("trajectory times must increase".into()));
        }
        Ok(())
    }

    /// Record a model's deformed Gaussians at `times`.
    pub fn from_model(model: &SpgsModel, times: &[f64], path: RenderPath) -> Result<Self> {
        let mut positions = Vec::with_capacity(times.len());
        let mut rotations = Vec::with_capacity(times.len());
        for &t in times {
            let (pos, rot) = model.deformed(t, path)?;
            positions.push(pos);
            rotations.push(rot.iter().map(Quat::from_rotmat).collect());
        }
        let traj = Self { times: times.to_vec(), positions, rotations };
        traj.validate()?;
        Ok(traj)
    }
}

pub fn write_trajectories(traj: &Trajectories, out: impl Write) -> Result<()> {
    traj.validate()?;
    let mut w = Writer::new(out);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(traj.gaussians())?;
    w.u32(traj.times.len())?;
    w.f32s(&traj.times)?;
    for (pos, rot) in traj.positions.iter().zip(&traj.rotations) {
        let mut row = Vec::with_capacity(pos.len() * 7);
        for (p, q) in pos.iter().zip(rot) {
            row.extend_from_slice(&[p.x, p.y, p.z]);
            row.extend_from_slice(&q.to_array());
        }
        w.f32s(&row)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn read_trajectories(input: impl Read) -> Result<Trajectories> {
    let mut r = Reader::new(input);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let p = r.count(1 << 28)?;
    let t = r.count(1 << 20)?;
    let times = r.f32s(t)?;
    let mut positions = Vec::with_capacity(t);
    let mut rotations = Vec::with_capacity(t);
    for _ in 0..t {
        let row = r.f32s(p * 7)?;
        positions.push(row.chunks_exact(7).map(|c| Vector3::new(c[0], c[1], c[2])).collect());
        rotations.push(
            row.chunks_exact(7)
                .map(|c| {
                    let q = Quat::new(c[3], c[4], c[5], c[6]);
                    q.normalized().map(|_| q)
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    r.finish()?;
    let traj = Trajectories { times, positions, rotations };
    traj.validate()?;
    Ok(traj)
}

pub fn save_trajectories(traj: &Trajectories, path: &Path) -> Result<()> {
    write_trajectories(traj, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_trajectories(path: &Path) -> Result<Trajectories> {
    read_trajectories(std::io::BufReader::new(std::fs::File::open(path)?))
}
