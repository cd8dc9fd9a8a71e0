//! Binary little-endian PLY in the layout used by Gaussian splatting tools:
//! `x y z f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`, opacity as a
//! logit, scales as logs, higher-order SH stored channel-major.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{sh_basis_count, GaussianCloud};

fn property_names(sh_degree: usize) -> Vec<String> {
    let rest = sh_basis_count(sh_degree) - 1;
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// One row in property order.
fn row(cloud: &GaussianCloud, i: usize, out: &mut Vec<f64>) {
    let b = sh_basis_count(cloud.sh_degree);
    let sh = cloud.sh_coeffs(i);
    out.extend_from_slice(&cloud.positions[i * 3..i * 3 + 3]);
    out.extend_from_slice(&sh[..3]);
    for c in 0..3 {
        for k in 1..b {
            out.push(sh[k * 3 + c]);
        }
    }
    out.push(cloud.opacity_logits[i]);
    out.extend_from_slice(&cloud.log_scales[i * 3..i * 3 + 3]);
    out.extend_from_slice(&cloud.rotations[i * 4..i * 4 + 4]);
}

pub fn write_ply(cloud: &GaussianCloud, mut w: impl Write) -> Result<()> {
    let names = property_names(cloud.sh_degree);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut values = Vec::with_capacity(names.len());
    let mut buf = Vec::with_capacity(names.len() * 4 * cloud.len());
    for i in 0..cloud.len() {
        values.clear();
        row(cloud, i, &mut values);
        for &v in &values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(cloud, &mut f)?;
    f.flush()?;
    Ok(())
}

fn type_size(ty: &str) -> Option<usize> {
    match ty {
        "char" | "uchar" | "int8" | "uint8" => Some(1),
        "short" | "ushort" | "int16" | "uint16" => Some(2),
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => Some(4),
        "double" | "float64" => Some(8),
        _ => None,
    }
}

fn decode(ty: &str, b: &[u8]) -> f64 {
    match ty {
        "float" | "float32" => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        "double" | "float64" => f64::from_le_bytes(b.try_into().expect("8 bytes")),
        "char" | "int8" => b[0] as i8 as f64,
        "uchar" | "uint8" => b[0] as f64,
        "short" | "int16" => i16::from_le_bytes([b[0], b[1]]) as f64,
        "ushort" | "uint16" => u16::from_le_bytes([b[0], b[1]]) as f64,
        "int" | "int32" => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        _ => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
    }
}

struct Header {
    count: usize,
    properties: Vec<(String, String)>,
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let malformed = |m: &str| Error::Format(format!("malformed PLY header: {m}"));
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(malformed("unexpected end of file"));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(malformed("missing magic"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    let mut in_vertex = false;
    let mut format_ok = false;
    loop {
        next(&mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", ..] => return Err(malformed("only binary_little_endian is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| malformed("bad vertex count"))?);
                } else if n.parse::<usize>().map_err(|_| malformed("bad element count"))? != 0 {
                    return Err(malformed("elements other than vertex are not supported"));
                }
            }
            ["property", "list", ..] => return Err(malformed("list properties are not supported")),
            ["property", ty, name] => {
                if in_vertex {
                    if type_size(ty).is_none() {
                        return Err(malformed(&format!("unknown type {ty}")));
                    }
                    properties.push((ty.to_string(), name.to_string()));
                }
            }
            _ => return Err(malformed(line.trim_end())),
        }
    }
    if !format_ok {
        return Err(malformed("missing format line"));
    }
    let count = count.ok_or_else(|| malformed("missing vertex element"))?;
    Ok(Header { count, properties })
}

pub fn read_ply(r: impl Read) -> Result<GaussianCloud> {
    let mut r = BufReader::new(r);
    let header = read_header(&mut r)?;
    let index: HashMap<&str, usize> = header.properties.iter().enumerate().map(|(i, (_, n))| (n.as_str(), i)).collect();
    let rest = header.properties.iter().filter(|(_, n)| n.starts_with("f_rest_")).count();
    if rest % 3 != 0 {
        return Err(Error::Format(format!("{rest} f_rest properties is not a multiple of 3")));
    }
    let sh_degree = (0..=3usize)
        .find(|&d| sh_basis_count(d) - 1 == rest / 3)
        .ok_or_else(|| Error::Format(format!("{rest} f_rest properties match no SH degree")))?;
    let wanted = property_names(sh_degree);
    let slots: Vec<usize> = wanted
        .iter()
        .map(|n| index.get(n.as_str()).copied().ok_or_else(|| Error::Format(format!("missing property {n}"))))
        .collect::<Result<_>>()?;

    let sizes: Vec<usize> = header.properties.iter().map(|(t, _)| type_size(t).expect("checked")).collect();
    let offsets: Vec<usize> = sizes.iter().scan(0, |acc, s| { let o = *acc; *acc += s; Some(o) }).collect();
    let stride: usize = sizes.iter().sum();
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != stride * header.count {
        return Err(Error::Format(format!(
            "vertex data is {} bytes, header declares {} vertices of {} bytes",
            body.len(),
            header.count,
            stride
        )));
    }

    let b = sh_basis_count(sh_degree);
    let mut cloud = GaussianCloud::with_capacity(header.count, sh_degree);
    let mut v = vec![0.0; wanted.len()];
    for rec in body.chunks_exact(stride) {
        for (dst, &s) in v.iter_mut().zip(&slots) {
            let (ty, _) = &header.properties[s];
            *dst = decode(ty, &rec[offsets[s]..offsets[s] + sizes[s]]);
        }
        cloud.positions.extend_from_slice(&v[0..3]);
        let mut sh = vec![0.0; b * 3];
        sh[..3].copy_from_slice(&v[3..6]);
        for c in 0..3 {
            for k in 1..b {
                sh[k * 3 + c] = v[6 + c * (b - 1) + k - 1];
            }
        }
        cloud.sh.extend_from_slice(&sh);
        let o = 6 + 3 * (b - 1);
        cloud.opacity_logits.push(v[o]);
        cloud.log_scales.extend_from_slice(&v[o + 1..o + 4]);
        cloud.rotations.extend_from_slice(&v[o + 4..o + 8]);
    }
    Ok(cloud)
}

pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    read_ply(std::fs::File::open(path)?)
}
