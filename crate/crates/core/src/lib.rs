//! Unsupervised multiphase segmentation of grayscale scans.
//!
//! The workflow has four steps:
//!
//! 1. smooth the image with an edge-preserving filter ([`smoothing`]),
//! 2. flag pixels that straddle two phases ([`transition`]), using local
//!    deconvolution ([`deconv`]) driven by steerable quadrature filters
//!    ([`filters`]) or a plain morphological gradient,
//! 3. segment the remaining single-class pixels with a Gaussian mixture
//!    ([`mixture`]),
//! 4. give every transition pixel the class of the spatially nearest
//!    single-class region ([`pipeline`]).
//!
//! [`phantom`] and [`eval`] provide the synthetic two-grain benchmark and the
//! misclassification / area-fraction metrics used to score a segmentation.
//!
//! ```no_run
//! use phaseseg::phantom::{generate_phantom, PhantomSpec};
//! use phaseseg::pipeline::{run, PipelineConfig};
//! use phaseseg::eval::misclassification_error;
//!
//! let spec = PhantomSpec { blur: 2.0, noise: 14.0, ..PhantomSpec::default() };
//! let (image, truth) = generate_phantom(&spec).unwrap();
//! let (labels, _report) = run(&image, &PipelineConfig::default()).unwrap();
//! println!("ME = {}", misclassification_error(&truth, &labels).unwrap());
//! ```

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod deconv;
pub mod distance;
pub mod error;
pub mod eval;
pub mod filters;
pub mod image;
pub mod io;
pub mod mixture;
pub mod phantom;
pub mod pipeline;
pub mod smoothing;
pub mod transition;

pub use error::{Error, Result};
pub use image::{GrayImage, LabelMap};
