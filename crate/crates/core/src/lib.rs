//! Simulation and analysis toolkit for driving a superconducting transmon
//! with a direct-digital-synthesis (DDS) arbitrary waveform generator.
//!
//! The crate follows the signal chain end to end:
//!
//! * [`pulse`]: analytic DRAG-corrected Gaussian envelopes and the primitive
//!   gate set.
//! * [`dds`]: carrier modulation with global phase continuity, DAC
//!   quantization, the memory-effect distortion model and digital
//!   downconversion.
//! * [`clifford`]: the 24-element single-qubit Clifford group and RB
//!   sequence generation.
//! * [`device`]: a three-level transmon with T1/T2 decoherence and a
//!   single-shot readout model.
//! * [`rb`]: randomized benchmarking campaigns, decay fitting, automated
//!   tune-up and parameter sweeps.
//! * [`noise`]: phase-noise spectra, dephasing PSDs, filter functions and
//!   the resulting infidelity floor.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clifford;
pub mod dds;
pub mod device;
pub mod error;
pub mod linalg;
pub mod noise;
pub mod pulse;
pub mod rb;
pub mod rng;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
