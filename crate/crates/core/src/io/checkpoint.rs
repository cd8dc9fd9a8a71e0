//! Versioned binary checkpoint of a whole model. All reals are stored as
//! little-endian `f32`, neighbor ids as `u32`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::bin::{Reader, Writer};
use crate::deform::{DeformNet, DeformationCache, NetConfig};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::model::SpgsModel;
use crate::scene::GaussianCloud;
use crate::superpoint::SuperpointModel;

pub const MAGIC: &[u8; 4] = b"SPGS";
pub const VERSION: usize = 1;
const LIMIT: usize = 1 << 28;

fn write_net<W: Write>(w: &mut Writer<W>, net: &DeformNet) -> Result<()> {
    let c = net.config;
    for v in [c.depth, c.width, c.position_freqs, c.time_freqs, c.skip, net.mlp.params.len()] {
        w.u32(v)?;
    }
    w.f32s(&net.mlp.params)
}

fn read_net<R: Read>(r: &mut Reader<R>) -> Result<DeformNet> {
    let config = NetConfig {
        depth: r.count(1 << 10)?,
        width: r.count(1 << 16)?,
        position_freqs: r.count(64)?,
        time_freqs: r.count(64)?,
        skip: r.count(1 << 10)?,
    };
    let n = r.count(LIMIT)?;
    if n != config.shape().param_count() {
        return Err(Error::Format(format!("network has {n} parameters, architecture needs {}", config.shape().param_count())));
    }
    DeformNet::from_params(config, r.f32s(n)?)
}

pub fn write_checkpoint(model: &SpgsModel, out: impl Write) -> Result<()> {
    model.validate()?;
    let mut w = Writer::new(out);
    let c = &model.cloud;
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(c.len())?;
    w.u32(c.sh_degree)?;
    w.u32(model.active_sh_degree)?;
    for flag in [model.superpoints.is_some(), model.deform.is_some(), model.nonrigid.is_some(), model.cache.is_some()] {
        w.flag(flag)?;
    }
    for a in [&c.positions, &c.log_scales, &c.rotations, &c.opacity_logits, &c.sh] {
        w.f32s(a)?;
    }
    w.u32(model.train_times.len())?;
    w.f32s(&model.train_times)?;
    if let Some(sp) = &model.superpoints {
        w.u32(sp.len())?;
        w.u32(sp.k)?;
        w.f32s(&sp.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())?;
        w.u32s(&sp.neighbors)?;
        w.f32s(&sp.logits)?;
    }
    if let Some(net) = &model.deform {
        write_net(&mut w, net)?;
    }
    if let Some(net) = &model.nonrigid {
        write_net(&mut w, net)?;
    }
    if let Some(cache) = &model.cache {
        w.u32(cache.times.len())?;
        w.u32(cache.superpoints())?;
        w.f32s(&cache.times)?;
        let flat: Vec<f64> = cache.transforms.iter().flatten().flat_map(|x| x.to_array()).collect();
        w.f32s(&flat)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<SpgsModel> {
    let mut r = Reader::new(input);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let p = r.count(LIMIT)?;
    let sh_degree = r.count(3)?;
    let active_sh_degree = r.count(3)?;
    let [has_sp, has_deform, has_nonrigid, has_cache] = [r.flag()?, r.flag()?, r.flag()?, r.flag()?];
    let mut cloud = GaussianCloud::with_capacity(0, sh_degree);
    let stride = cloud.sh_stride();
    cloud.positions = r.f32s(3 * p)?;
    cloud.log_scales = r.f32s(3 * p)?;
    cloud.rotations = r.f32s(4 * p)?;
    cloud.opacity_logits = r.f32s(p)?;
    cloud.sh = r.f32s(stride * p)?;
    let t = r.count(LIMIT)?;
    let train_times = r.f32s(t)?;
    let superpoints = if has_sp {
        let m = r.count(LIMIT)?;
        let k = r.count(LIMIT)?;
        let positions = r.f32s(3 * m)?.chunks_exact(3).map(Vector3::from_column_slice).collect();
        let neighbors = r.u32s(p * k)?;
        let logits = r.f32s(p * k)?;
        Some(SuperpointModel { positions, neighbors, logits, k })
    } else {
        None
    };
    let deform = if has_deform { Some(read_net(&mut r)?) } else { None };
    let nonrigid = if has_nonrigid { Some(read_net(&mut r)?) } else { None };
    let cache = if has_cache {
        let tc = r.count(LIMIT)?;
        let m = r.count(LIMIT)?;
        let times = r.f32s(tc)?;
        let flat = r.f32s(tc * m * 6)?;
        let transforms = flat
            .chunks_exact(m.max(1) * 6)
            .take(tc)
            .map(|row| row.chunks_exact(6).map(RigidTransform::from_slice).collect())
            .collect();
        Some(DeformationCache::new(times, transforms)?)
    } else {
        None
    };
    r.finish()?;
    let model = SpgsModel { cloud, superpoints, deform, nonrigid, train_times, cache, active_sh_degree };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(model: &SpgsModel, path: &Path) -> Result<()> {
    write_checkpoint(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<SpgsModel> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Round every stored quantity through `f32`, so that the model equals its
/// own reloaded checkpoint.
pub fn quantize_model(model: &mut SpgsModel) {
    let q = |v: &mut f64| *v = *v as f32 as f64;
    model.cloud.quantize_f32();
    model.train_times.iter_mut().for_each(q);
    if let Some(sp) = &mut model.superpoints {
        sp.positions.iter_mut().flat_map(|p| p.iter_mut()).for_each(q);
        sp.logits.iter_mut().for_each(q);
    }
    for net in [&mut model.deform, &mut model.nonrigid].into_iter().flatten() {
        net.mlp.params.iter_mut().for_each(q);
    }
    if let Some(cache) = &mut model.cache {
        cache.times.iter_mut().for_each(q);
        for x in cache.transforms.iter_mut().flatten() {
            x.rotation.0.iter_mut().for_each(q);
            x.translation.iter_mut().for_each(q);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_cloud, rng};
    use rand::Rng;

    fn model(nonrigid: bool, cache: bool) -> SpgsModel {
        let mut r = rng(4);
        let cloud = random_cloud(&mut r, 12, 2, 0.9);
        let (pos, _) = crate::rasterizer::canonical_buffers(&cloud).unwrap();
        let mut m = SpgsModel::from_cloud(cloud, vec![0.0, 0.25, 1.0]);
        m.active_sh_degree = 1;
        let mut sp = SuperpointModel::initialize(&pos, 4, 2).unwrap();
        sp.logits.iter_mut().for_each(|l| *l = r.gen_range(-1.0..1.0));
        m.superpoints = Some(sp);
        let config = NetConfig { depth: 5, width: 8, position_freqs: 3, time_freqs: 2, skip: 4 };
        let mut net = DeformNet::new(config, 1);
        net.mlp.params.iter_mut().for_each(|p| *p += r.gen_range(-0.1..0.1));
        m.deform = Some(net);
        if nonrigid {
            m.nonrigid = Some(DeformNet::new(NetConfig { width: 4, depth: 2, ..config }, 2));
        }
        if cache {
            m.build_cache().unwrap();
        }
        quantize_model(&mut m);
        m
    }

    fn encode(m: &SpgsModel) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(m, &mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (nonrigid, cache) in [(false, false), (true, false), (false, true), (true, true)] {
            let m = model(nonrigid, cache);
            let bytes = encode(&m);
            let back = read_checkpoint(bytes.as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back), bytes);
        }
        let mut static_model = SpgsModel::from_cloud(random_cloud(&mut rng(1), 3, 0, 0.9), vec![0.0, 1.0]);
        quantize_model(&mut static_model);
        assert_eq!(read_checkpoint(encode(&static_model).as_slice()).unwrap(), static_model);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model(false, false));
        assert_eq!(&bytes[..4], b"SPGS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 12);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&model(true, true));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(read_checkpoint(v2.as_slice()), Err(Error::Format(m)) if m.contains("version")));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_checkpoint(magic.as_slice()).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
    }
}
