//! Lifting-posture classification from pose-landmark sequences.
//!
//! The pipeline: 33-landmark pose frames are flattened into feature vectors
//! ([`pose`]), cut into 30-frame windows, and classified Good/Bad by a
//! stacked LSTM ([`lstm`]) trained with BPTT and Adam ([`training`]).
//! [`metrics`] scores held-out predictions, [`dataset`] handles files and
//! synthetic data, and [`risk`] runs live sessions over frame streams.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod lstm;
pub mod metrics;
pub mod pose;
pub mod risk;
pub mod training;

pub use error::{Error, Result};
