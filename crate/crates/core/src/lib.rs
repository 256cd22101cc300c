//! Multi-modal temporal state estimation.
//!
//! Single-source sequence labelers (encoder-decoder TCN, peephole LSTM and an
//! event-classifier ensemble) whose per-frame state distributions are combined
//! by diagnostic-odds-ratio weighted voting. Synthetic multi-modal trials come
//! from a finite-state-machine simulator.

pub mod domain;
pub mod error;
pub mod eval;
pub mod events;
pub mod fusion;
pub mod io;
pub mod lstm;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod seed;
pub mod simgen;
pub mod stream;
pub mod tcn;

pub use domain::{
    louo_splits, segment_runs, FeatureSequence, Fold, Modality, ProbSeries, Segment,
    StateSequence, StateVocab, TrialBundle,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
