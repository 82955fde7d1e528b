use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned world-space box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::invalid(format!("degenerate aabb {min:?}..{max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Self { min: [-half; 3], max: [half; 3] }
    }

    pub fn size(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn diagonal(&self) -> f64 {
        let s = self.size();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.size().iter().product()
    }

    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    /// Maps a world position to `[0, 1]` per axis (unclamped).
    #[inline]
    pub fn normalize(&self, p: &Vec3) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.min[a]) / (self.max[a] - self.min[a]))
    }

    /// Slab test; returns the parametric interval `[t_near, t_far]` with
    /// `t_near >= 0`, or `None` if the ray misses.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_intersection() {
        let b = Aabb::cube(0.5);
        let (t0, t1) = b.intersect(&Vec3::new(-2.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t0 - 1.5).abs() < 1e-12 && (t1 - 2.5).abs() < 1e-12);
        assert!(b.intersect(&Vec3::new(-2.0, 2.0, 0.0), &Vec3::new(1.0, 0.0, 0.0)).is_none());
        // Origin inside: near clamps to zero.
        let (t0, t1) = b.intersect(&Vec3::zeros(), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(Aabb::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }
}
