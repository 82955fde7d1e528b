use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame};
use crate::aabb::{Aabb, Vec3};
use crate::error::{Error, Result};
use crate::render::{render_field, Camera, RadianceField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// A sphere moving along X as `A·sin(2πt)` next to a static box.
    OscillatingSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SceneKind,
    pub n_train: usize,
    pub n_test: usize,
    /// Image width and height in pixels.
    pub resolution: u32,
    pub amplitude: f64,
    pub seed: u64,
    /// Ray-marching step used to render the ground truth.
    pub render_step: f64,
    pub camera_distance: f64,
    pub fov_x: f64,
    pub background: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::OscillatingSphere,
            n_train: 24,
            n_test: 4,
            resolution: 64,
            amplitude: 0.5,
            seed: 0,
            render_step: 3.0 / 512.0,
            camera_distance: 4.5,
            fov_x: 0.7,
            background: [1.0; 3],
        }
    }
}

/// The analytic scene behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticField {
    pub amplitude: f64,
    pub sphere_radius: f64,
    pub box_center: Vec3,
    pub box_half: f64,
    pub sigma_max: f64,
    /// Width of the linear density ramp at surfaces.
    pub edge: f64,
}

impl SyntheticField {
    pub fn new(amplitude: f64) -> Self {
        Self {
            amplitude,
            sphere_radius: 0.4,
            box_center: Vec3::new(0.0, -0.75, -0.55),
            box_half: 0.3,
            sigma_max: 40.0,
            edge: 0.05,
        }
    }

    pub fn sphere_center(&self, t: f64) -> Vec3 {
        Vec3::new(self.amplitude * (2.0 * PI * t).sin(), 0.2, 0.15)
    }

    fn ramp(&self, signed_dist: f64) -> f64 {
        (0.5 - signed_dist / self.edge).clamp(0.0, 1.0)
    }

    fn sphere_dist(&self, p: &Vec3, t: f64) -> f64 {
        (p - self.sphere_center(t)).norm() - self.sphere_radius
    }

    fn box_dist(&self, p: &Vec3) -> f64 {
        let q = (p - self.box_center).abs().add_scalar(-self.box_half);
        let outside = q.map(|v| v.max(0.0)).norm();
        outside + q.max().min(0.0)
    }
}

impl RadianceField for SyntheticField {
    fn density(&self, p: &Vec3, t: f64) -> f64 {
        self.sigma_max * self.ramp(self.sphere_dist(p, t)).max(self.ramp(self.box_dist(p)))
    }

    fn color(&self, p: &Vec3, _dir: &Vec3, t: f64) -> [f64; 3] {
        let light = Vec3::new(0.4, 0.8, 0.45).normalize();
        if self.sphere_dist(p, t) < self.box_dist(p) {
            let n = (p - self.sphere_center(t)).normalize();
            let shade = 0.55 + 0.45 * n.dot(&light).max(0.0);
            [0.9 * shade, 0.25 * shade, 0.15 * shade]
        } else {
            let u = (p - self.box_center) / self.box_half;
            [0.15 + 0.1 * u.x, 0.45 + 0.15 * u.y, 0.8 - 0.1 * u.z]
        }
    }
}

fn orbit_camera(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Result<Camera> {
    let azimuth: f64 = rng.gen_range(0.0..2.0 * PI);
    let elevation: f64 = rng.gen_range(0.1..0.9);
    let d = spec.camera_distance;
    let eye = Vec3::new(d * elevation.cos() * azimuth.cos(), d * elevation.sin(), d * elevation.cos() * azimuth.sin());
    Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), spec.fov_x, spec.resolution, spec.resolution)
}

/// Renders the procedural scene from random orbit cameras. Training
/// frames are at times `i/(n_train-1)`, test frames at `(j+0.5)/n_test`.
pub fn make_synthetic(spec: &SynthSpec) -> Result<(Dataset, SyntheticField)> {
    if spec.resolution < 16 {
        return Err(Error::invalid(format!("synthetic resolution {} below 16", spec.resolution)));
    }
    if spec.n_train == 0 || !(spec.render_step > 0.0) {
        return Err(Error::invalid("synthetic dataset needs n_train >= 1 and a positive render step"));
    }
    let field = match spec.kind {
        SceneKind::OscillatingSphere => SyntheticField::new(spec.amplitude),
    };
    let aabb = Aabb::cube(1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train_times: Vec<f64> = (0..spec.n_train)
        .map(|i| if spec.n_train > 1 { i as f64 / (spec.n_train - 1) as f64 } else { 0.0 })
        .collect();
    let test_times: Vec<f64> = (0..spec.n_test).map(|j| (j as f64 + 0.5) / spec.n_test as f64).collect();
    let poses: Vec<(Camera, f64, bool)> = train_times
        .iter()
        .map(|&t| (t, true))
        .chain(test_times.iter().map(|&t| (t, false)))
        .map(|(t, train)| Ok((orbit_camera(&mut rng, spec)?, t, train)))
        .collect::<Result<_>>()?;
    let frames: Vec<(Frame, bool)> = poses
        .into_par_iter()
        .map(|(cam, t, train)| {
            let img = render_field(&field, &cam, t, &aabb, spec.render_step, spec.background);
            Ok((Frame::new(img, cam, t)?, train))
        })
        .collect::<Result<_>>()?;
    let (train, test): (Vec<_>, Vec<_>) = frames.into_iter().partition(|(_, tr)| *tr);
    let ds = Dataset {
        name: "oscillating-sphere".into(),
        train: train.into_iter().map(|(f, _)| f).collect(),
        test: test.into_iter().map(|(f, _)| f).collect(),
        aabb,
        background: spec.background,
    };
    Ok((ds, field))
}
