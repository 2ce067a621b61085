//! Shipping-label image quality verification.
//!
//! Stages:
//!
//! 1. [`synthlabel`] renders annotated labels in five quality classes.
//! 2. [`roidet`] localizes the barcode and address regions, [`fastloc`]
//!    picks the tiles with the most FAST corners.
//! 3. [`nnet`] trains one small convolutional extractor per branch
//!    (global image, address, barcode, FAST tiles).
//! 4. [`fusion`] concatenates branch features into a stacked classifier and
//!    provides majority / weighted-majority voting baselines.
//! 5. [`evalharness`] runs stratified k-fold evaluation and renders reports.
//!
//! [`pipeline`] wires the stages together for the CLI and the acceptance suite.

pub mod evalharness;
pub mod fastloc;
pub mod fusion;
pub mod nnet;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod roidet;
pub mod synthlabel;

pub use raster::{BoundingBox, Raster};
pub use synthlabel::{Annotation, QualityClass};
