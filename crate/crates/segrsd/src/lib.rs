//! Files, synthetic data, checkpoints and reports around [`segrsd_core`].
//!
//! The `segrsd` binary drives the whole pipeline from the command line:
//! `synth`, `import`, `segment`, `train-rsd`, `evaluate` and `baselines`.

pub mod checkpoint;
pub mod corpus_io;
pub mod error;
pub mod eval;
pub mod report;
pub mod split;
pub mod synth;

pub use segrsd_core;

pub use checkpoint::{
    load_rsd_checkpoint, load_seg_checkpoint, save_rsd_checkpoint, save_seg_checkpoint, Expected, RsdCheckpoint,
};
pub use corpus_io::{import_csv, load_corpus, save_corpus, FeatureFileHeader};
pub use error::{DataError, Result};
pub use split::split_corpus;
pub use synth::{synth_generate, SynthConfig, SynthCorpus};
