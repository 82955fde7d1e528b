use serde::{Deserialize, Serialize};

use crate::aabb::{Aabb, Vec3};
use crate::error::{Error, Result};

/// Binary occupancy grid over a box. Cell `(a, b, c)` spans
/// `[a, a+1]·size/res` along each axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMask {
    aabb: Aabb,
    res: [usize; 3],
    cells: Vec<bool>,
}

impl OccupancyMask {
    pub fn new(aabb: Aabb, res: [usize; 3], cells: Vec<bool>) -> Result<Self> {
        if res.iter().any(|&r| r == 0) || cells.len() != res.iter().product::<usize>() {
            return Err(Error::invalid(format!("mask cells do not match resolution {res:?}")));
        }
        Ok(Self { aabb, res, cells })
    }

    /// Builds a mask from occupancy flags on the `(res+1)^3` lattice of
    /// cell corners: a cell is occupied if any of its eight corners is.
    pub fn from_corners(aabb: Aabb, nodes: [usize; 3], corner: &[bool]) -> Result<Self> {
        if nodes.iter().any(|&n| n < 2) || corner.len() != nodes.iter().product::<usize>() {
            return Err(Error::invalid("corner lattice must have at least 2 nodes per axis"));
        }
        let res = [nodes[0] - 1, nodes[1] - 1, nodes[2] - 1];
        let node = |a: usize, b: usize, c: usize| corner[(a * nodes[1] + b) * nodes[2] + c];
        let mut cells = vec![false; res.iter().product()];
        for a in 0..res[0] {
            for b in 0..res[1] {
                for c in 0..res[2] {
                    let occ = (0..8).any(|k| node(a + (k & 1), b + ((k >> 1) & 1), c + ((k >> 2) & 1)));
                    cells[(a * res[1] + b) * res[2] + c] = occ;
                }
            }
        }
        Self::new(aabb, res, cells)
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell(&self, a: usize, b: usize, c: usize) -> bool {
        self.cells[(a * self.res[1] + b) * self.res[2] + c]
    }

    /// False outside the mask box.
    #[inline]
    pub fn occupied(&self, p: &Vec3) -> bool {
        if !self.aabb.contains(p) {
            return false;
        }
        let u = self.aabb.normalize(p);
        let idx: [usize; 3] =
            std::array::from_fn(|a| ((u[a] * self.res[a] as f64) as usize).min(self.res[a] - 1));
        self.cell(idx[0], idx[1], idx[2])
    }

    /// Bounding box of occupied cells grown by `margin` cells and clipped to
    /// the mask box. `None` if no cell is occupied.
    pub fn occupied_bounds(&self, margin: usize) -> Option<Aabb> {
        let mut lo = self.res;
        let mut hi = [0usize; 3];
        let mut any = false;
        for a in 0..self.res[0] {
            for b in 0..self.res[1] {
                for c in 0..self.res[2] {
                    if self.cell(a, b, c) {
                        any = true;
                        for (ax, v) in [a, b, c].into_iter().enumerate() {
                            lo[ax] = lo[ax].min(v);
                            hi[ax] = hi[ax].max(v + 1);
                        }
                    }
                }
            }
        }
        if !any {
            return None;
        }
        let size = self.aabb.size();
        let min = std::array::from_fn(|a| {
            let i = lo[a].saturating_sub(margin);
            self.aabb.min[a] + size[a] * i as f64 / self.res[a] as f64
        });
        let max = std::array::from_fn(|a| {
            let i = (hi[a] + margin).min(self.res[a]);
            self.aabb.min[a] + size[a] * i as f64 / self.res[a] as f64
        });
        Some(Aabb { min, max })
    }
}
