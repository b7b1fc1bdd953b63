//! Elbow joint-angle estimation from a ring of six stretch sensors whose
//! position on the arm is not fixed.
//!
//! The pipeline normalizes each session, orders channels by fuzzy entropy
//! so that the model sees the same channel roles regardless of where the
//! pad sits, regresses the angle with a stacked LSTM, optionally adapts to
//! a new user with an output-level MMD penalty, and smooths the estimate
//! with a constant-velocity Kalman filter.

pub mod entropy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod lstm;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod smooth;
pub mod transfer;
pub mod types;

pub use error::{Error, Result};
pub use types::{Dataset, Placement, SensorFrame, Session, Split, Window, CHANNELS};
