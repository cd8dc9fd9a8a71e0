//! D-NeRF style datasets: `transforms_{train,test}.json` with a horizontal
//! field of view and per-frame camera-to-world matrices and times.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::image_io::{load_image_over, save_image};
use crate::error::{Error, Result};
use crate::scene::{Camera, Dataset, Frame};

/// Axis convention of the stored camera-to-world matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraConvention {
    /// x right, y up, looking down -z (Blender; what D-NeRF ships).
    #[default]
    Opengl,
    /// x right, y down, looking down +z.
    Opencv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub file_path: String,
    pub time: f64,
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    #[serde(default)]
    pub camera_convention: CameraConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    pub frames: Vec<FrameRecord>,
}

/// World-to-camera (OpenCV axes) from a stored camera-to-world matrix.
pub fn world_to_camera(c2w: &[[f64; 4]; 4], convention: CameraConvention) -> Result<Matrix4<f64>> {
    let mut m = Matrix4::from_fn(|r, c| c2w[r][c]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dataset("non-finite camera matrix".into()));
    }
    if convention == CameraConvention::Opengl {
        for r in 0..3 {
            m[(r, 1)] = -m[(r, 1)];
            m[(r, 2)] = -m[(r, 2)];
        }
    }
    m.try_inverse().ok_or_else(|| Error::Dataset("singular camera matrix".into()))
}

/// Inverse of [`world_to_camera`].
pub fn camera_to_world(w2c: &Matrix4<f64>, convention: CameraConvention) -> [[f64; 4]; 4] {
    let mut m = w2c.try_inverse().expect("rigid camera pose");
    if convention == CameraConvention::Opengl {
        for r in 0..3 {
            m[(r, 1)] = -m[(r, 1)];
            m[(r, 2)] = -m[(r, 2)];
        }
    }
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn read_transforms(path: &Path) -> Result<TransformsFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Load a dataset directory. Times are normalized jointly over both splits
/// to `[0, 1]`. `background` overrides the file's background color (black
/// when neither is given); transparent pixels are composited over it.
pub fn load_dataset(dir: &Path, background: Option<Vector3<f64>>) -> Result<Dataset> {
    let train = read_transforms(&dir.join("transforms_train.json"))?;
    let test_path = dir.join("transforms_test.json");
    let test = if test_path.exists() { Some(read_transforms(&test_path)?) } else { None };
    let bg = background.unwrap_or_else(|| train.background.map(Vector3::from).unwrap_or_else(Vector3::zeros));

    let all = train.frames.iter().chain(test.iter().flat_map(|t| &t.frames));
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in all {
        if !f.time.is_finite() {
            return Err(Error::Dataset(format!("non-finite time in frame {}", f.file_path)));
        }
        t_min = t_min.min(f.time);
        t_max = t_max.max(f.time);
    }
    if !(t_max > t_min) {
        return Err(Error::TooFewTimesteps);
    }

    let frames = |file: &TransformsFile| -> Result<Vec<Frame>> {
        file.frames
            .iter()
            .map(|rec| {
                let path = image_path(dir, &rec.file_path);
                if !path.exists() {
                    return Err(Error::Dataset(format!("missing image {}", path.display())));
                }
                let image = load_image_over(&path, &bg)?;
                let w2c = world_to_camera(&rec.transform_matrix, file.camera_convention)?;
                let camera = Camera::from_fov(w2c, file.camera_angle_x, image.width, image.height);
                Ok(Frame {
                    name: rec.file_path.clone(),
                    camera,
                    time: (rec.time - t_min) / (t_max - t_min),
                    image: Some(image),
                })
            })
            .collect()
    };
    let train_frames = frames(&train)?;
    let test_frames = match &test {
        Some(t) => frames(t)?,
        None => Vec::new(),
    };
    Dataset::new(train_frames, test_frames, bg)
}

/// Write frames (which must carry images) as `<split>/<name>.png` plus the
/// transforms file.
pub fn save_split(dir: &Path, split: &str, frames: &[Frame], background: &Vector3<f64>) -> Result<()> {
    std::fs::create_dir_all(dir.join(split))?;
    let fov = frames.first().map(|f| 2.0 * (f.camera.width as f64 / (2.0 * f.camera.fx)).atan()).unwrap_or(0.9);
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let image = f.image.as_ref().ok_or_else(|| Error::Dataset(format!("frame {} has no image", f.name)))?;
        let file_path = format!("{split}/{}", f.name);
        save_image(image, &dir.join(format!("{file_path}.png")))?;
        records.push(FrameRecord {
            file_path,
            time: f.time,
            transform_matrix: camera_to_world(&f.camera.world_to_camera, CameraConvention::Opengl),
        });
    }
    let file = TransformsFile {
        camera_angle_x: fov,
        camera_convention: CameraConvention::Opengl,
        background: Some([background.x, background.y, background.z]),
        frames: records,
    };
    std::fs::write(dir.join(format!("transforms_{split}.json")), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}
