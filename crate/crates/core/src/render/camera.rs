use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::aabb::Vec3;
use crate::error::{Error, Result};

/// A ray with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Pinhole camera in the Blender convention: the camera looks along its
/// local −Z axis with +Y up; `c2w` maps camera to world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    c2w: Matrix4<f64>,
    fov_x: f64,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(c2w: Matrix4<f64>, fov_x: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_x > 0.0 && fov_x < std::f64::consts::PI) {
            return Err(Error::invalid(format!("field of view {fov_x} outside (0, π)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        let rot: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if err > 1e-4 || !c2w.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (deviation {err:.2e})"
            )));
        }
        Ok(Self { c2w, fov_x, width, height })
    }

    /// Camera at `eye` looking at `target` with world `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_x: f64, width: u32, height: u32) -> Result<Self> {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look_at: up vector parallel to view direction"));
        }
        let right = right.normalize();
        let true_up = back.cross(&right);
        let mut c2w = Matrix4::identity();
        for r in 0..3 {
            c2w[(r, 0)] = right[r];
            c2w[(r, 1)] = true_up[r];
            c2w[(r, 2)] = back[r];
            c2w[(r, 3)] = eye[r];
        }
        Self::new(c2w, fov_x, width, height)
    }

    pub fn c2w(&self) -> &Matrix4<f64> {
        &self.c2w
    }

    pub fn fov_x(&self) -> f64 {
        self.fov_x
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_x).tan()
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::new(self.c2w[(0, 3)], self.c2w[(1, 3)], self.c2w[(2, 3)])
    }

    /// Same pose with a different image size; the horizontal field of view is kept.
    pub fn with_size(&self, width: u32, height: u32) -> Result<Self> {
        Self::new(self.c2w, self.fov_x, width, height)
    }

    /// Ray through the center of pixel `(px, py)`, `py` counted from the top row.
    #[inline]
    pub fn ray(&self, px: u32, py: u32) -> Ray {
        let f = self.focal();
        let dx = (px as f64 + 0.5 - 0.5 * self.width as f64) / f;
        let dy = -(py as f64 + 0.5 - 0.5 * self.height as f64) / f;
        let local = Vec3::new(dx, dy, -1.0);
        let rot = self.c2w.fixed_view::<3, 3>(0, 0);
        let dir = (rot * local).normalize();
        Ray { origin: self.origin(), dir }
    }

    pub fn generate_rays(&self, pixels: &[(u32, u32)]) -> Result<Vec<Ray>> {
        pixels
            .iter()
            .map(|&(px, py)| {
                if px >= self.width || py >= self.height {
                    return Err(Error::invalid(format!(
                        "pixel ({px}, {py}) outside {}x{} image",
                        self.width, self.height
                    )));
                }
                Ok(self.ray(px, py))
            })
            .collect()
    }
}
