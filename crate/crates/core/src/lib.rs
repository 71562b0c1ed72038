//! Prototype-guided few-shot nucleus instance segmentation.
//!
//! The crate is `no_std` and only needs `alloc`. It holds the numerical
//! pieces of the pipeline:
//!
//! - [`tensor`] and [`ops`]: a small dense tensor type with the forward
//!   primitives (same-padded convolution, masked pooling, cosine maps,
//!   softmax and the two training losses).
//! - [`grad`]: analytic parameter gradients for the guidance heads.
//! - [`labels`]: conversion of instance rasters into class, foreground,
//!   boundary and centroid supervision channels.
//! - [`guidance`]: prototypes, the classification and structural heads,
//!   base-prototype learning and support-set fine-tuning.
//! - [`episodes`]: seeded support/query task sampling.
//! - [`watershed`]: marker derivation, marker-controlled flooding and class
//!   fusion.
//! - [`metrics`]: detection F1, AJI, panoptic quality and Dice.
//! - [`pipeline`]: end-to-end inference over precomputed feature maps.
//!
//! File formats, the synthetic data generator and the command-line tool live
//! in the companion `sgfsis` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod components;
pub mod episodes;
mod error;
pub mod grad;
pub mod gradcheck;
pub mod guidance;
pub mod labels;
pub mod metrics;
pub mod morphology;
pub mod ops;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod tensor;
pub mod watershed;

pub use error::{Error, Result};
pub use raster::{BinaryMask, LabelRaster, Raster};
pub use tensor::{ConvParams, Scalar, Tensor};
