//! Analytic pulse envelopes and the primitive gate set.
//!
//! Envelopes are baseline-subtracted truncated Gaussians with a first-order
//! DRAG quadrature. Amplitudes are fractions of DAC full scale.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::PulseError;

/// Default Gaussian width (s).
pub const DEFAULT_SIGMA: f64 = 6e-9;
/// Default envelope length in units of sigma.
pub const DEFAULT_TRUNCATION: f64 = 4.0;
/// Default idle appended after every pulse (s).
pub const DEFAULT_BUFFER: f64 = 5e-9;

/// In-phase and quadrature envelope values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Iq {
    pub i: f64,
    pub q: f64,
}

/// Truncated Gaussian pulse with DRAG quadrature.
///
/// `stark_rate` (rad/s per full-scale²) adds a frame detuning
/// `stark_rate · I(t)²`, applied as a phase ramp on the complex envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub sigma: f64,
    pub truncation: f64,
    pub amplitude: f64,
    pub drag_coefficient: f64,
    pub phase: f64,
    pub buffer_after: f64,
    #[serde(default)]
    pub stark_rate: f64,
}

impl PulseShape {
    pub fn new(
        sigma: f64,
        truncation: f64,
        amplitude: f64,
        drag_coefficient: f64,
        phase: f64,
        buffer_after: f64,
    ) -> Result<Self, PulseError> {
        let shape = Self {
            sigma,
            truncation,
            amplitude,
            drag_coefficient,
            phase,
            buffer_after,
            stark_rate: 0.0,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_stark_rate(mut self, stark_rate: f64) -> Self {
        self.stark_rate = stark_rate;
        self
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        if !(self.amplitude.abs() <= 1.0) {
            return Err(PulseError::AmplitudeOutOfRange(self.amplitude));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(PulseError::InvalidTiming(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(PulseError::InvalidTiming(format!(
                "truncation must be positive, got {}",
                self.truncation
            )));
        }
        if !(self.buffer_after >= 0.0 && self.buffer_after.is_finite()) {
            return Err(PulseError::InvalidTiming(format!(
                "buffer must be non-negative, got {}",
                self.buffer_after
            )));
        }
        if !self.drag_coefficient.is_finite() || !self.phase.is_finite() {
            return Err(PulseError::InvalidTiming(
                "drag coefficient and phase must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Envelope length `T = truncation · sigma`.
    pub fn duration(&self) -> f64 {
        self.truncation * self.sigma
    }

    /// Envelope length plus the trailing buffer.
    pub fn total_duration(&self) -> f64 {
        self.duration() + self.buffer_after
    }

    fn center(&self) -> f64 {
        0.5 * self.duration()
    }

    fn baseline(&self) -> f64 {
        let t = self.duration();
        (-(t * t) / (8.0 * self.sigma * self.sigma)).exp()
    }

    fn inside(&self, t: f64) -> bool {
        (0.0..=self.duration()).contains(&t)
    }

    /// Unit-peak envelope shape g(t).
    pub fn unit_envelope(&self, t: f64) -> f64 {
        if !self.inside(t) {
            return 0.0;
        }
        let b = self.baseline();
        let x = t - self.center();
        let g = (-(x * x) / (2.0 * self.sigma * self.sigma)).exp();
        ((g - b) / (1.0 - b)).max(0.0)
    }

    fn unit_derivative(&self, t: f64) -> f64 {
        if !self.inside(t) {
            return 0.0;
        }
        let b = self.baseline();
        let s2 = self.sigma * self.sigma;
        let x = t - self.center();
        -x / s2 * (-(x * x) / (2.0 * s2)).exp() / (1.0 - b)
    }

    /// I and Q at time `t` (relative to pulse start). `anharmonicity` is the
    /// DRAG reference in rad/s.
    pub fn envelope(&self, t: f64, anharmonicity: f64) -> Iq {
        if !self.inside(t) {
            return Iq::default();
        }
        let i = self.amplitude * self.unit_envelope(t);
        let q = if self.drag_coefficient == 0.0 {
            0.0
        } else {
            -self.drag_coefficient * self.amplitude * self.unit_derivative(t) / anharmonicity
        };
        Iq { i, q }
    }

    /// Time integral of g from 0 to `t`.
    pub fn unit_area_until(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let b = self.baseline();
        (self.gauss_integral(t) - b * t) / (1.0 - b)
    }

    /// ∫₀ᵀ g dt.
    pub fn unit_area(&self) -> f64 {
        self.unit_area_until(self.duration())
    }

    fn gauss_integral(&self, t: f64) -> f64 {
        let s = self.sigma;
        let t0 = self.center();
        s * (PI / 2.0).sqrt() * (libm::erf((t - t0) / (SQRT_2 * s)) + libm::erf(t0 / (SQRT_2 * s)))
    }

    fn gauss_sq_integral(&self, t: f64) -> f64 {
        let s = self.sigma;
        let t0 = self.center();
        0.5 * s * PI.sqrt() * (libm::erf((t - t0) / s) + libm::erf(t0 / s))
    }

    /// ∫₀ᵗ g² dt.
    pub fn unit_square_area_until(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let b = self.baseline();
        (self.gauss_sq_integral(t) - 2.0 * b * self.gauss_integral(t) + b * b * t)
            / ((1.0 - b) * (1.0 - b))
    }

    /// Accumulated Stark phase ψ(t) at time `t` after pulse start.
    pub fn stark_phase(&self, t: f64) -> f64 {
        if self.stark_rate == 0.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        self.stark_rate * self.amplitude * self.amplitude * self.unit_square_area_until(t)
    }

    /// Stark phase accumulated over the whole pulse; following pulses are
    /// shifted by this amount (virtual Z).
    pub fn total_stark_phase(&self) -> f64 {
        self.stark_phase(self.duration())
    }

    /// Complex baseband `(I + iQ) · e^{-i(φ + ψ(t))}` at time `t` after
    /// pulse start, with `frame_phase` added to the pulse phase.
    pub fn baseband(&self, t: f64, anharmonicity: f64, frame_phase: f64) -> Complex64 {
        PreparedPulse::new(self, anharmonicity).baseband(t, frame_phase)
    }
}

/// A pulse with its per-shape constants precomputed for dense sampling.
#[derive(Clone, Copy, Debug)]
pub struct PreparedPulse {
    duration: f64,
    t0: f64,
    inv_2s2: f64,
    inv_s2: f64,
    b: f64,
    i_scale: f64,
    q_scale: f64,
    phase: f64,
    stark_scale: f64,
    inv_sqrt2_sigma: f64,
    inv_sigma: f64,
    erf0_g: f64,
    erf0_g2: f64,
    c_g: f64,
    c_g2: f64,
}

impl PreparedPulse {
    pub fn new(shape: &PulseShape, anharmonicity: f64) -> Self {
        let s = shape.sigma;
        let duration = shape.duration();
        let t0 = 0.5 * duration;
        let b = shape.baseline();
        let i_scale = shape.amplitude / (1.0 - b);
        let q_scale = if shape.drag_coefficient == 0.0 {
            0.0
        } else {
            -shape.drag_coefficient * i_scale / anharmonicity
        };
        Self {
            duration,
            t0,
            inv_2s2: 1.0 / (2.0 * s * s),
            inv_s2: 1.0 / (s * s),
            b,
            i_scale,
            q_scale,
            phase: shape.phase,
            stark_scale: shape.stark_rate * shape.amplitude * shape.amplitude
                / ((1.0 - b) * (1.0 - b)),
            inv_sqrt2_sigma: 1.0 / (SQRT_2 * s),
            inv_sigma: 1.0 / s,
            erf0_g: libm::erf(t0 / (SQRT_2 * s)),
            erf0_g2: libm::erf(t0 / s),
            c_g: s * (PI / 2.0).sqrt(),
            c_g2: 0.5 * s * PI.sqrt(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Complex baseband at time `t` after pulse start.
    pub fn baseband(&self, t: f64, frame_phase: f64) -> Complex64 {
        if !(0.0..=self.duration).contains(&t) {
            return Complex64::new(0.0, 0.0);
        }
        let x = t - self.t0;
        let g = (-x * x * self.inv_2s2).exp();
        let i = if g > self.b {
            self.i_scale * (g - self.b)
        } else {
            0.0
        };
        let q = -self.q_scale * x * self.inv_s2 * g;
        let mut angle = self.phase + frame_phase;
        if self.stark_scale != 0.0 {
            let int_g = self.c_g * (libm::erf(x * self.inv_sqrt2_sigma) + self.erf0_g);
            let int_g2 = self.c_g2 * (libm::erf(x * self.inv_sigma) + self.erf0_g2);
            angle += self.stark_scale * (int_g2 - 2.0 * self.b * int_g + self.b * self.b * t);
        }
        let (s, c) = angle.sin_cos();
        Complex64::new(i * c + q * s, q * c - i * s)
    }
}

/// The seven primitive gates used to build Cliffords.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimitiveGate {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "X90")]
    X90,
    #[serde(rename = "-X90")]
    Xm90,
    #[serde(rename = "X180")]
    X180,
    #[serde(rename = "Y90")]
    Y90,
    #[serde(rename = "-Y90")]
    Ym90,
    #[serde(rename = "Y180")]
    Y180,
}

impl PrimitiveGate {
    pub const ALL: [PrimitiveGate; 7] = [
        PrimitiveGate::I,
        PrimitiveGate::X90,
        PrimitiveGate::Xm90,
        PrimitiveGate::X180,
        PrimitiveGate::Y90,
        PrimitiveGate::Ym90,
        PrimitiveGate::Y180,
    ];

    /// Rotation angle (rad) and axis phase (0 = X, π/2 = Y).
    pub fn rotation(self) -> (f64, f64) {
        match self {
            PrimitiveGate::I => (0.0, 0.0),
            PrimitiveGate::X90 => (FRAC_PI_2, 0.0),
            PrimitiveGate::Xm90 => (-FRAC_PI_2, 0.0),
            PrimitiveGate::X180 => (PI, 0.0),
            PrimitiveGate::Y90 => (FRAC_PI_2, FRAC_PI_2),
            PrimitiveGate::Ym90 => (-FRAC_PI_2, FRAC_PI_2),
            PrimitiveGate::Y180 => (PI, FRAC_PI_2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PrimitiveGate::I => "I",
            PrimitiveGate::X90 => "X90",
            PrimitiveGate::Xm90 => "-X90",
            PrimitiveGate::X180 => "X180",
            PrimitiveGate::Y90 => "Y90",
            PrimitiveGate::Ym90 => "-Y90",
            PrimitiveGate::Y180 => "Y180",
        }
    }
}

impl fmt::Display for PrimitiveGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn default_beta() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}
fn default_buffer() -> f64 {
    DEFAULT_BUFFER
}

/// Tuned pulse parameters shared by all primitives.
///
/// `stark_rad_s` is the frame-detuning coefficient in rad/s per full-scale²;
/// it is zero unless tune-up set it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    #[serde(default)]
    pub a_pi: Option<f64>,
    #[serde(default)]
    pub a_pi_2: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub sigma_s: f64,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    #[serde(default = "default_buffer")]
    pub buffer_s: f64,
    #[serde(default)]
    pub stark_rad_s: f64,
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self {
            a_pi: None,
            a_pi_2: None,
            beta: default_beta(),
            sigma_s: DEFAULT_SIGMA,
            truncation: DEFAULT_TRUNCATION,
            buffer_s: DEFAULT_BUFFER,
            stark_rad_s: 0.0,
        }
    }
}

impl CalibrationTable {
    /// Table with σ chosen so that `truncation · σ + buffer = gate_length`.
    pub fn for_gate_length(gate_length: f64, buffer: f64) -> Result<Self, PulseError> {
        let envelope = gate_length - buffer;
        if !(envelope > 0.0) || buffer < 0.0 {
            return Err(PulseError::InvalidTiming(format!(
                "gate length {gate_length} s leaves no room for a pulse with buffer {buffer} s"
            )));
        }
        Ok(Self {
            sigma_s: envelope / DEFAULT_TRUNCATION,
            buffer_s: buffer,
            ..Self::default()
        })
    }

    pub fn with_amplitudes(mut self, a_pi: f64, a_pi_2: f64) -> Self {
        self.a_pi = Some(a_pi);
        self.a_pi_2 = Some(a_pi_2);
        self
    }

    pub fn pulse_duration(&self) -> f64 {
        self.truncation * self.sigma_s
    }

    /// Duration of one primitive gate including its buffer.
    pub fn gate_length(&self) -> f64 {
        self.pulse_duration() + self.buffer_s
    }
}

/// Maps a primitive onto a concrete envelope using the calibration table.
pub fn primitive_to_shape(
    gate: PrimitiveGate,
    calib: &CalibrationTable,
) -> Result<PulseShape, PulseError> {
    let need = |a: Option<f64>| a.ok_or(PulseError::Untuned(gate));
    let (amplitude, phase) = match gate {
        PrimitiveGate::I => (0.0, 0.0),
        PrimitiveGate::X180 => (need(calib.a_pi)?, 0.0),
        PrimitiveGate::Y180 => (need(calib.a_pi)?, FRAC_PI_2),
        PrimitiveGate::X90 => (need(calib.a_pi_2)?, 0.0),
        PrimitiveGate::Xm90 => (-need(calib.a_pi_2)?, 0.0),
        PrimitiveGate::Y90 => (need(calib.a_pi_2)?, FRAC_PI_2),
        PrimitiveGate::Ym90 => (-need(calib.a_pi_2)?, FRAC_PI_2),
    };
    let shape = PulseShape::new(
        calib.sigma_s,
        calib.truncation,
        amplitude,
        calib.beta,
        phase,
        calib.buffer_s,
    )?;
    Ok(shape.with_stark_rate(calib.stark_rad_s))
}
