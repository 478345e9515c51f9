//! Joint aspect-category detection and polarity classification for short
//! documents, built from scratch on a minimal dense-tensor kernel.
//!
//! The crate provides:
//!
//! * [`tensor`] — dense `f64` tensors, forward/backward operations on a
//!   gradient tape, SGD, gradient clipping, and a finite-difference oracle;
//! * [`embed`] — tokenization, word-embedding file I/O, character n-gram
//!   composition for out-of-vocabulary words, and a subword skip-gram trainer;
//! * [`corpus`] — dataset parsing, the joint label-vector encoding, and the
//!   training-split conflict filter;
//! * [`model`] — end-to-end and pipeline CNN/BiLSTM classifiers plus the
//!   stand-in aspect detector the pipelines consume;
//! * [`train`] — mini-batch SGD training with early stopping and random
//!   hyperparameter search;
//! * [`eval`] — micro-averaged F1 for the aspect+sentiment and aspect-only
//!   tasks, the majority-class baseline, and reference-score deltas;
//! * [`fixtures`] — deterministic synthetic datasets used by tests and the
//!   acceptance suite.

pub mod corpus;
pub mod embed;
pub mod eval;
pub mod fixtures;
pub mod model;
pub mod tensor;
pub mod train;

pub use tensor::Mode;
