//! Pixel-wise symbol spotting for CAD raster images.
//!
//! The pipeline turns a grayscale drawing into typed keypoints and then into
//! rectangle symbols:
//!
//! - [`codec`] encodes keypoints as Gaussian heatmaps plus sub-cell offsets
//!   and decodes predicted maps back to sub-pixel coordinates.
//! - [`schedule`] anneals the Gaussian kernel size over training epochs.
//! - [`model`] is a small fully-convolutional predictor with hand-written
//!   backpropagation and an Adam trainer.
//! - [`detect`] tiles large images, runs a predictor per patch and stitches
//!   the detections.
//! - [`group`] chains typed keypoints into scales, blocks and walls.
//! - [`eval`] scores keypoints, regions and symbols.
//! - [`synth`] renders synthetic scenes with exact ground truth.

pub mod annotation;
pub mod codec;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geom;
pub mod group;
pub mod model;
pub mod raster;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod taxonomy;

pub use annotation::{AnnotatedImage, Annotation};
pub use error::{Error, Result};
pub use geom::{BBox, Keypoint, RectangleSymbol, RegionBox, SymbolClass};
pub use raster::Raster;
pub use taxonomy::{Direction, KeypointType, NUM_TYPES};
