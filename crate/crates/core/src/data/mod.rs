//! Datasets, the procedural test scene and checkpoint files.

mod checkpoint;
mod dnerf;
mod synth;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, ArrayEntry, CheckpointHeader, MaskEntry, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dnerf::{load_dnerf, write_dnerf, LoadOptions};
pub use synth::{make_synthetic, SceneKind, SynthSpec, SyntheticField};

use crate::aabb::Aabb;
use crate::error::{Error, Result};
use crate::render::{Camera, Image};

/// One posed, timed image.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub camera: Camera,
    pub time: f64,
}

impl Frame {
    pub fn new(image: Image, camera: Camera, time: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::invalid(format!("frame time {time} outside [0, 1]")));
        }
        if (image.width(), image.height()) != (camera.width(), camera.height()) {
            return Err(Error::invalid("image size does not match camera"));
        }
        Ok(Self { image, camera, time })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    pub aabb: Aabb,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::invalid(format!("dataset {} has no training frames", self.name)));
        }
        Ok(())
    }

    /// Total number of training pixels.
    pub fn train_pixels(&self) -> usize {
        self.train.iter().map(|f| f.camera.width() as usize * f.camera.height() as usize).sum()
    }
}
