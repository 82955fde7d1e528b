pub mod aabb;
pub mod data;
pub mod error;
pub mod factors;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod render;
pub mod train;

pub use error::{Error, Result};
