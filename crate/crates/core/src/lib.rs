//! Dual-branch speech emotion recognition.
//!
//! A spectral graph-convolution classifier reads word graphs built from
//! transcripts; a small self-supervised transformer learns from masked
//! prediction of k-means units over MFCC frames and is then fine-tuned for
//! emotion. Each branch emits a [`fusion::ScoreTable`]; score-level fusion
//! takes the per-class maximum of the two probability rows.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod dsp;
pub mod error;
pub mod fusion;
pub mod gcn;
pub mod hubert;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod synthetic;
pub mod textgraph;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use numerics::Matrix;
