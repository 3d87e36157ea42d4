//! Algorithmic core of RTMDet-style real-time detectors: label assignment,
//! box and rotated-box geometry, losses, cached Mosaic/MixUp augmentation,
//! architecture accounting, post-processing, evaluation and dataset I/O.

pub mod archspec;
pub mod assign;
pub mod augment;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod postproc;
pub mod sched;

pub use error::{Error, Result};
pub use geometry::{AABox, AnyBox, BitMask, BoxGeometry, Point, Polygon, RBox};
