//! Temporal ghost imaging with spatially correlated photon pairs.
//!
//! A temporal signal modulates the signal arm of a twin-beam source. The
//! camera integrates every step into one frame, while the idler arm is
//! recorded step by step. Cross-correlating the integrated signal frame with
//! each idler frame, after removing the deterministic beam shape, recovers
//! the signal from the twin coincidences.

pub mod calibration;
pub mod correlation;
pub mod error;
pub mod exec;
pub mod frame;
pub mod pipeline;
pub mod reconstruction;
pub mod seed;
pub mod source;

pub use error::{Error, Result};
pub use exec::Exec;
pub use frame::{DetectorGeometry, PhotonFrame};
pub use seed::{Channel, Purpose, StepSeed};
pub use source::{Envelope, OperatingPoint, Simulator, SourceParams, TimeSignal};
