use thiserror::Error;

use crate::pulse::PrimitiveGate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while building pulse shapes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("pulse amplitude {0} exceeds full scale (|a| must be <= 1)")]
    AmplitudeOutOfRange(f64),
    #[error("invalid pulse timing: {0}")]
    InvalidTiming(String),
    #[error("gate {0} has no calibrated amplitude (run tune-up first)")]
    Untuned(PrimitiveGate),
}

/// Errors raised by the waveform synthesis chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdsError {
    #[error("invalid DAC configuration: {0}")]
    InvalidDac(String),
    #[error(
        "tone {index} at {frequency_hz:.6e} Hz violates Nyquist for sample rate {sample_rate:.6e} S/s"
    )]
    Nyquist {
        index: usize,
        frequency_hz: f64,
        sample_rate: f64,
    },
    #[error("waveform clips at sample {index} (value {value} of full scale)")]
    Clipping { index: usize, value: f64 },
    #[error("invalid demodulation settings: {0}")]
    InvalidDemodulation(String),
    #[error("invalid time span: {0}")]
    InvalidSpan(String),
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

/// Errors raised by the transmon simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device model: {0}")]
    InvalidModel(String),
    #[error("density matrix invariant violated at step {step}: {reason}")]
    Integration { step: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors raised by the exponential decay fit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} distinct sequence lengths, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("input lengths mismatch: {0}")]
    Shape(String),
    #[error("singular normal matrix; parameters are not identifiable from the data")]
    Singular,
    #[error("fit did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Errors raised by the phase-noise pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("spectrum needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("PSD does not cover the integration band: {0}")]
    Coverage(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Dds(#[from] DdsError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("decay fit failed: {source}")]
    Fit {
        source: FitError,
        /// Raw `(length, mean survival, standard error)` data that failed to fit.
        data: Vec<(usize, f64, f64)>,
    },
    #[error("tune-up failed: {0}")]
    TuneUp(String),
    #[error("background correction failed: {0}")]
    Correction(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sweep failed at {parameter} = {value}: {source}")]
    Sweep {
        parameter: String,
        value: f64,
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
