#![no_std]

//! Unsupervised temporal segmentation of frame-feature sequences and its use
//! as an auxiliary task for remaining-surgery-duration (RSD) regression.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! file formats, the command line and report rendering live in the `segrsd`
//! companion crate.
//!
//! Module map:
//!
//! - [`types`]: videos, segmentations, label sequences and corpora.
//! - [`appearance`]: the discriminative frame classifier, temporal-coherence
//!   pretraining and staged unfreezing.
//! - [`mallows`], [`lengths`], [`temporal`]: the generative temporal model
//!   (order, lengths, joint likelihood and the segmentation sampler).
//! - [`seg_trainer`]: the alternating training loop and the TC measure.
//! - [`rsd`]: the RSD regressor, SmoothL1 / corridor losses and pipelines.
//! - [`metrics`]: MAE in minutes and mapped segmentation accuracy.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod appearance;
pub mod error;
pub mod lengths;
pub mod mallows;
pub mod matrix;
pub mod metrics;
mod optim;
pub mod rng;
pub mod rsd;
pub mod seg_trainer;
pub mod temporal;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use types::{Corpus, LabelSequence, Segmentation, Split, VideoSequence};
