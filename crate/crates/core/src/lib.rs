//! Regularization-based continual learning for time-series anomaly detection.
//!
//! A stacked-LSTM binary classifier is trained on a sequence of tasks
//! (products of a multi-pump press, or permuted-pixel images) under one of
//! five strategies: no regularization, EWC, Online EWC, Synaptic Intelligence
//! or Learning without Forgetting. After every training phase the model is
//! evaluated on all tasks of the sequence.

pub mod engine;
pub mod data;
pub mod strategies;
pub mod experiments;
pub mod error;

pub use error::{Error, Result};
