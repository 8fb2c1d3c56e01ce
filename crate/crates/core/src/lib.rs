//! Semi-supervised segmentation with Fourier amplitude mixing and
//! confidence-aware cross pseudo supervision, at desk scale.

pub mod error;
pub mod grid;
pub mod image;
pub mod loss;
pub mod phantom;
pub mod segnet;
pub mod spectral;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use image::{Image, LabelMap, NUM_CLASSES};
