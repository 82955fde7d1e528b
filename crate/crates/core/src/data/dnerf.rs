use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame};
use crate::aabb::Aabb;
use crate::error::{Error, Result};
use crate::render::{Camera, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    pub background: [f64; 3],
    pub aabb: Aabb,
    /// Integer box-filter downsampling applied after loading.
    pub downsample: u32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { background: [1.0; 3], aabb: Aabb::cube(1.5), downsample: 1 }
    }
}

#[derive(Serialize, Deserialize)]
struct Transforms {
    camera_angle_x: f64,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    file_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
    transform_matrix: [[f64; 4]; 4],
}

fn ds_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), reason: reason.into() }
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

fn load_image(path: &Path, bg: [f64; 3]) -> Result<Image> {
    let img = image::open(path).map_err(|e| ds_err(path, format!("cannot read image: {e}")))?;
    let rgba = img.to_rgba32f();
    let (w, h) = rgba.dimensions();
    let mut data = Vec::with_capacity(3 * (w * h) as usize);
    for px in rgba.pixels() {
        let a = px[3] as f64;
        for c in 0..3 {
            data.push((px[c] as f64 * a + bg[c] * (1.0 - a)) as f32);
        }
    }
    Image::from_rgb(w, h, data)
}

fn load_split(dir: &Path, split: &str, opts: &LoadOptions) -> Result<Vec<Frame>> {
    let json_path = dir.join(format!("transforms_{split}.json"));
    let text = std::fs::read_to_string(&json_path).map_err(|e| ds_err(&json_path, e.to_string()))?;
    let tf: Transforms = serde_json::from_str(&text).map_err(|e| ds_err(&json_path, format!("malformed JSON: {e}")))?;
    let n = tf.frames.len();
    let with_time = tf.frames.iter().filter(|f| f.time.is_some()).count();
    if with_time != 0 && with_time != n {
        return Err(ds_err(&json_path, "some frames have a time and some do not"));
    }
    if with_time == 0 && n > 0 {
        warn!("{}: no frame times; assigning uniform times over [0, 1]", json_path.display());
    }
    tf.frames
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let time = match rec.time {
                Some(t) => t,
                None if n > 1 => i as f64 / (n - 1) as f64,
                None => 0.0,
            };
            if !(0.0..=1.0).contains(&time) {
                return Err(ds_err(&json_path, format!("frame {i} time {time} outside [0, 1]")));
            }
            let img_path = image_path(dir, &rec.file_path);
            let mut image = load_image(&img_path, opts.background)?;
            if opts.downsample > 1 {
                image = image.downsample(opts.downsample)?;
            }
            let m = Matrix4::from_fn(|r, c| rec.transform_matrix[r][c]);
            let camera = Camera::new(m, tf.camera_angle_x, image.width(), image.height())
                .map_err(|e| ds_err(&json_path, format!("frame {i}: {e}")))?;
            Frame::new(image, camera, time)
        })
        .collect()
}

/// Loads `transforms_train.json` and, if present, `transforms_test.json`.
pub fn load_dnerf(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let train = load_split(dir, "train", opts)?;
    let test = if dir.join("transforms_test.json").exists() { load_split(dir, "test", opts)? } else { Vec::new() };
    let name = dir.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    let ds = Dataset { name, train, test, aabb: opts.aabb, background: opts.background };
    ds.validate().map_err(|e| ds_err(dir, e.to_string()))?;
    Ok(ds)
}

/// Writes a dataset in the same layout `load_dnerf` reads, with 8-bit RGB
/// images under `train/` and `test/`.
pub fn write_dnerf(ds: &Dataset, dir: &Path) -> Result<()> {
    for (split, frames) in [("train", &ds.train), ("test", &ds.test)] {
        std::fs::create_dir_all(dir.join(split))?;
        let mut records = Vec::with_capacity(frames.len());
        let mut fov = None;
        for (i, f) in frames.iter().enumerate() {
            let rel = format!("./{split}/r_{i:03}");
            f.image.save_png(&image_path(dir, &rel))?;
            let c2w = f.camera.c2w();
            records.push(FrameRecord {
                file_path: rel,
                time: Some(f.time),
                transform_matrix: std::array::from_fn(|r| std::array::from_fn(|c| c2w[(r, c)])),
            });
            fov = Some(f.camera.fov_x());
        }
        let tf = Transforms { camera_angle_x: fov.unwrap_or(std::f64::consts::FRAC_PI_4), frames: records };
        std::fs::write(dir.join(format!("transforms_{split}.json")), serde_json::to_string_pretty(&tf)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, times: &[Option<f64>], alpha: u8) {
        std::fs::create_dir_all(dir.join("train")).unwrap();
        let mut frames = Vec::new();
        for (i, t) in times.iter().enumerate() {
            let name = format!("train/r_{i}");
            let img = image::RgbaImage::from_pixel(4, 2, image::Rgba([255, 0, 0, alpha]));
            img.save(dir.join(format!("{name}.png"))).unwrap();
            let mut f = serde_json::json!({
                "file_path": format!("./{name}"),
                "transform_matrix": [[1.0,0.0,0.0,0.0],[0.0,1.0,0.0,0.0],[0.0,0.0,1.0,4.0],[0.0,0.0,0.0,1.0]],
            });
            if let Some(t) = t {
                f["time"] = serde_json::json!(t);
            }
            frames.push(f);
        }
        let tf = serde_json::json!({"camera_angle_x": 0.6911112070083618, "frames": frames});
        std::fs::write(dir.join("transforms_train.json"), tf.to_string()).unwrap();
    }

    #[test]
    fn two_frame_fixture() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[Some(0.0), Some(1.0)], 255);
        let ds = load_dnerf(d.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train[0].time, 0.0);
        assert_eq!(ds.train[1].time, 1.0);
        assert!(ds.test.is_empty());
        assert_eq!(ds.train[0].image.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn focal_from_camera_angle() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[Some(0.5)], 255);
        let ds = load_dnerf(d.path(), &LoadOptions::default()).unwrap();
        let cam = ds.train[0].camera.with_size(400, 400).unwrap();
        assert!((cam.focal() - 555.555).abs() < 0.1, "{}", cam.focal());
    }

    #[test]
    fn transparent_pixel_becomes_background() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[Some(0.5)], 0);
        let ds = load_dnerf(d.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.train[0].image.pixel(1, 1), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_times_are_spread_uniformly() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[None, None, None], 255);
        let ds = load_dnerf(d.path(), &LoadOptions::default()).unwrap();
        let t: Vec<f64> = ds.train.iter().map(|f| f.time).collect();
        assert_eq!(t, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn bad_inputs_are_errors() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[Some(1.5)], 255);
        assert!(load_dnerf(d.path(), &LoadOptions::default()).is_err());

        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), &[Some(0.5)], 255);
        std::fs::remove_file(d.path().join("train/r_0.png")).unwrap();
        let e = load_dnerf(d.path(), &LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("r_0.png"), "{e}");

        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("transforms_train.json"), "{ not json").unwrap();
        assert!(matches!(load_dnerf(d.path(), &LoadOptions::default()), Err(Error::Dataset { .. })));
    }
}
