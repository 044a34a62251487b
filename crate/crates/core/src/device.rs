//! Three-level transmon in the rotating frame with T1/T2 decoherence and a
//! single-shot readout model.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DeviceError;
use crate::linalg::{c, conjugate_hermitian, expm_hermitian, C3, ZERO};
use crate::pulse::{PulseShape, DEFAULT_BUFFER, DEFAULT_SIGMA, DEFAULT_TRUNCATION};

/// π-pulse amplitude (fraction of full scale) that fixes the default drive
/// strength.
pub const REFERENCE_PI_AMPLITUDE: f64 = 0.0849;

/// Drive strength (rad/s per unit full scale) for which a 24 ns Gaussian at
/// [`REFERENCE_PI_AMPLITUDE`] is a π rotation.
pub fn default_rabi_per_fullscale() -> f64 {
    let shape = PulseShape::new(
        DEFAULT_SIGMA,
        DEFAULT_TRUNCATION,
        1.0,
        0.0,
        0.0,
        DEFAULT_BUFFER,
    )
    .expect("default pulse is valid");
    PI / (REFERENCE_PI_AMPLITUDE * shape.unit_area())
}

/// Homodyne amplitudes for the ground and excited readout responses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutLevels {
    pub s0: f64,
    pub s1: f64,
}

impl Default for ReadoutLevels {
    fn default() -> Self {
        Self { s0: 0.1, s1: 1.0 }
    }
}

fn default_f01() -> f64 {
    4.773e9
}
fn default_anharmonicity() -> f64 {
    375e6
}
fn default_f_readout() -> f64 {
    10.166e9
}
fn default_t1() -> Option<f64> {
    Some(51e-6)
}
fn default_t2() -> Option<f64> {
    Some(32e-6)
}
fn default_levels() -> u8 {
    3
}
fn default_fidelity() -> f64 {
    0.93
}

/// Transmon parameters. `t1_s`/`t2_s` of `None` mean no decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    #[serde(default = "default_f01")]
    pub f01_hz: f64,
    /// δ/2π (Hz); f12 = f01 − δ/2π.
    #[serde(default = "default_anharmonicity")]
    pub anharmonicity_hz: f64,
    #[serde(default = "default_f_readout")]
    pub f_readout_hz: f64,
    #[serde(default = "default_t1")]
    pub t1_s: Option<f64>,
    #[serde(default = "default_t2")]
    pub t2_s: Option<f64>,
    #[serde(default = "default_levels")]
    pub levels: u8,
    #[serde(default = "default_rabi_per_fullscale")]
    pub rabi_per_fullscale: f64,
    #[serde(default = "default_fidelity")]
    pub readout_fidelity: f64,
    #[serde(default)]
    pub readout_levels: ReadoutLevels,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            f01_hz: default_f01(),
            anharmonicity_hz: default_anharmonicity(),
            f_readout_hz: default_f_readout(),
            t1_s: default_t1(),
            t2_s: default_t2(),
            levels: default_levels(),
            rabi_per_fullscale: default_rabi_per_fullscale(),
            readout_fidelity: default_fidelity(),
            readout_levels: ReadoutLevels::default(),
        }
    }
}

impl DeviceModel {
    /// Same device with decoherence switched off.
    pub fn coherent(mut self) -> Self {
        self.t1_s = None;
        self.t2_s = None;
        self
    }

    pub fn with_levels(mut self, levels: u8) -> Self {
        self.levels = levels;
        self
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |m: String| Err(DeviceError::InvalidModel(m));
        if !(self.levels == 2 || self.levels == 3) {
            return bad(format!("levels must be 2 or 3, got {}", self.levels));
        }
        if !(self.f01_hz > 0.0 && self.anharmonicity_hz > 0.0 && self.f_readout_hz > 0.0) {
            return bad("frequencies must be positive".into());
        }
        if !(self.rabi_per_fullscale > 0.0 && self.rabi_per_fullscale.is_finite()) {
            return bad(format!(
                "rabi_per_fullscale must be positive, got {}",
                self.rabi_per_fullscale
            ));
        }
        if !(0.0..=1.0).contains(&self.readout_fidelity) {
            return bad(format!(
                "readout fidelity must be a probability, got {}",
                self.readout_fidelity
            ));
        }
        for t in [self.t1_s, self.t2_s].into_iter().flatten() {
            if !(t > 0.0) {
                return bad(format!("coherence times must be positive, got {t}"));
            }
        }
        if self.gamma_phi() < -1e-12 * self.gamma1().max(1.0) {
            return bad(format!(
                "T2 must not exceed 2·T1 (T1 = {:?}, T2 = {:?})",
                self.t1_s, self.t2_s
            ));
        }
        Ok(())
    }

    /// Energy relaxation rate 1/T1 (s⁻¹).
    pub fn gamma1(&self) -> f64 {
        self.t1_s.map_or(0.0, |t| 1.0 / t)
    }

    /// Pure dephasing rate 1/T2 − 1/(2T1) (s⁻¹).
    pub fn gamma_phi(&self) -> f64 {
        self.t2_s.map_or(0.0, |t| 1.0 / t) - 0.5 * self.gamma1()
    }

    /// δ in rad/s.
    pub fn anharmonicity_rad(&self) -> f64 {
        TAU * self.anharmonicity_hz
    }

    pub fn has_decoherence(&self) -> bool {
        self.t1_s.is_some() || self.t2_s.is_some()
    }
}

/// Density matrix; 2-level states keep level 2 empty.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    pub rho: C3,
    pub levels: u8,
}

impl QuantumState {
    pub fn ground(levels: u8) -> Self {
        Self::basis(levels, 0)
    }

    pub fn excited(levels: u8) -> Self {
        Self::basis(levels, 1)
    }

    pub fn basis(levels: u8, k: usize) -> Self {
        let mut rho = C3::zeros();
        rho[(k, k)] = c(1.0, 0.0);
        Self { rho, levels }
    }

    /// Pure state from amplitudes.
    pub fn pure(levels: u8, psi: [Complex64; 3]) -> Self {
        let v = nalgebra::Vector3::from(psi);
        let v = v / Complex64::from(v.norm());
        Self {
            rho: v * v.adjoint(),
            levels,
        }
    }

    pub fn populations(&self) -> [f64; 3] {
        [
            self.rho[(0, 0)].re,
            self.rho[(1, 1)].re,
            self.rho[(2, 2)].re,
        ]
    }

    /// Probability of not being in |0⟩.
    pub fn p_excited(&self) -> f64 {
        (1.0 - self.rho[(0, 0)].re).clamp(0.0, 1.0)
    }

    pub fn trace(&self) -> f64 {
        (0..3).map(|k| self.rho[(k, k)].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in i..3 {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (self.rho + self.rho.adjoint()) * c(0.5, 0.0);
        SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Checks trace, Hermiticity and positivity.
    pub fn validate(&self, tol: f64) -> Result<(), String> {
        let tr = self.trace();
        if (tr - 1.0).abs() > tol {
            return Err(format!("trace {tr}"));
        }
        let h = self.hermiticity_error();
        if h > tol {
            return Err(format!("hermiticity error {h}"));
        }
        let e = self.min_eigenvalue();
        if e < -tol {
            return Err(format!("negative eigenvalue {e}"));
        }
        if self.levels == 2 && self.rho[(2, 2)].re > tol {
            return Err("2-level state has population in |2>".into());
        }
        Ok(())
    }

    /// CSV rows `row,col,re,im`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "row,col,re,im")?;
        let n = usize::from(self.levels);
        for i in 0..n {
            for j in 0..n {
                let z = self.rho[(i, j)];
                writeln!(out, "{i},{j},{:.15e},{:.15e}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Per-step decoherence as element-wise multipliers plus population
/// transfers, equivalent to amplitude damping followed by dephasing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoherenceStep {
    multipliers: [[f64; 3]; 3],
    p1: f64,
    p2: f64,
}

impl DecoherenceStep {
    pub fn new(model: &DeviceModel, dt: f64) -> Self {
        let g1 = model.gamma1();
        let p1 = -(-g1 * dt).exp_m1();
        let p2 = -(-2.0 * g1 * dt).exp_m1();
        let s = [1.0, (1.0 - p1).sqrt(), (1.0 - p2).sqrt()];
        let gphi = model.gamma_phi().max(0.0);
        let mut multipliers = [[0.0; 3]; 3];
        for (j, row) in multipliers.iter_mut().enumerate() {
            for (k, m) in row.iter_mut().enumerate() {
                let d = j as f64 - k as f64;
                *m = s[j] * s[k] * (-d * d * gphi * dt).exp();
            }
        }
        Self {
            multipliers,
            p1,
            p2,
        }
    }

    pub fn apply(&self, rho: &mut C3) {
        let (r11, r22) = (rho[(1, 1)].re, rho[(2, 2)].re);
        for j in 0..3 {
            for k in 0..3 {
                rho[(j, k)] *= self.multipliers[j][k];
            }
        }
        rho[(0, 0)] += c(self.p1 * r11, 0.0);
        rho[(1, 1)] += c(self.p2 * r22, 0.0);
    }

    /// Explicit Kraus operators of the same channel.
    pub fn kraus(model: &DeviceModel, dt: f64) -> Vec<C3> {
        let g1 = model.gamma1();
        let p1 = -(-g1 * dt).exp_m1();
        let p2 = -(-2.0 * g1 * dt).exp_m1();
        let mut k0 = C3::zeros();
        k0[(0, 0)] = c(1.0, 0.0);
        k0[(1, 1)] = c((1.0 - p1).sqrt(), 0.0);
        k0[(2, 2)] = c((1.0 - p2).sqrt(), 0.0);
        let mut k1 = C3::zeros();
        k1[(0, 1)] = c(p1.sqrt(), 0.0);
        let mut k2 = C3::zeros();
        k2[(1, 2)] = c(p2.sqrt(), 0.0);
        let damping = [k0, k1, k2];

        let gphi = model.gamma_phi().max(0.0);
        let kernel = Matrix3::from_fn(|j, k| {
            let d = j as f64 - k as f64;
            (-d * d * gphi * dt).exp()
        });
        let eig = SymmetricEigen::new(kernel);
        let dephasing: Vec<C3> = (0..3)
            .filter(|&l| eig.eigenvalues[l] > 0.0)
            .map(|l| {
                let v = eig.eigenvectors.column(l);
                let w = eig.eigenvalues[l].sqrt();
                C3::from_diagonal(&nalgebra::Vector3::new(
                    c(w * v[0], 0.0),
                    c(w * v[1], 0.0),
                    c(w * v[2], 0.0),
                ))
            })
            .collect();

        let mut out = Vec::new();
        for d in &dephasing {
            for a in &damping {
                out.push(d * a);
            }
        }
        out
    }
}

/// Options for [`Propagator`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub decoherence: bool,
    /// Tolerance for the per-step trace and Hermiticity checks.
    pub tolerance: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            decoherence: true,
            tolerance: 1e-9,
        }
    }
}

/// Piecewise-constant rotating-frame integrator with cached step constants.
#[derive(Clone, Debug)]
pub struct Propagator {
    h0: [f64; 3],
    rabi: f64,
    dt: f64,
    coupling12: f64,
    decoherence: Option<DecoherenceStep>,
    idle: C3,
    tolerance: f64,
}

impl Propagator {
    pub fn new(
        model: &DeviceModel,
        frame_freq: f64,
        dt: f64,
        options: EvolveOptions,
    ) -> Result<Self, DeviceError> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DeviceError::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let detuning = TAU * (model.f01_hz - frame_freq);
        let h0 = if model.levels == 3 {
            [0.0, detuning, 2.0 * detuning - model.anharmonicity_rad()]
        } else {
            [0.0, detuning, 0.0]
        };
        let coupling12 = if model.levels == 3 { SQRT_2 } else { 0.0 };
        let idle = C3::from_diagonal(&nalgebra::Vector3::new(
            Complex64::from_polar(1.0, -h0[0] * dt),
            Complex64::from_polar(1.0, -h0[1] * dt),
            Complex64::from_polar(1.0, -h0[2] * dt),
        ));
        let decoherence = (options.decoherence && model.has_decoherence())
            .then(|| DecoherenceStep::new(model, dt));
        Ok(Self {
            h0,
            rabi: model.rabi_per_fullscale,
            dt,
            coupling12,
            decoherence,
            idle,
            tolerance: options.tolerance,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Hamiltonian (rad/s) for a baseband sample `z` in full-scale units.
    pub fn hamiltonian(&self, z: Complex64) -> C3 {
        let omega = z * self.rabi;
        let half = omega * 0.5;
        let half12 = half * self.coupling12;
        C3::new(
            c(self.h0[0], 0.0),
            half,
            ZERO,
            half.conj(),
            c(self.h0[1], 0.0),
            half12,
            ZERO,
            half12.conj(),
            c(self.h0[2], 0.0),
        )
    }

    /// Unitary for one step with constant baseband `z`.
    pub fn step_unitary(&self, z: Complex64) -> C3 {
        if (z.norm() * self.rabi * self.dt) < 1e-12 {
            self.idle
        } else {
            expm_hermitian(&self.hamiltonian(z), self.dt)
        }
    }

    /// Evolves `state` through the envelope samples in order.
    pub fn run(
        &self,
        state: &QuantumState,
        envelope: &[Complex64],
    ) -> Result<QuantumState, DeviceError> {
        let mut rho = state.rho;
        for (step, &z) in envelope.iter().enumerate() {
            let u = self.step_unitary(z);
            rho = conjugate_hermitian(&u, &rho);
            if let Some(d) = &self.decoherence {
                d.apply(&mut rho);
            }
            self.check(&rho, step)?;
        }
        let out = QuantumState {
            rho,
            levels: state.levels,
        };
        let e = out.min_eigenvalue();
        if e < -self.tolerance {
            return Err(DeviceError::Integration {
                step: envelope.len(),
                reason: format!("negative eigenvalue {e}"),
            });
        }
        Ok(out)
    }

    /// Coherent propagator for the whole envelope (later samples on the left).
    pub fn unitary(&self, envelope: &[Complex64]) -> C3 {
        envelope
            .iter()
            .fold(C3::identity(), |acc, &z| self.step_unitary(z) * acc)
    }

    /// Evolves through `steps` idle steps.
    pub fn idle(&self, state: &QuantumState, steps: usize) -> Result<QuantumState, DeviceError> {
        let mut rho = state.rho;
        for step in 0..steps {
            rho = conjugate_hermitian(&self.idle, &rho);
            if let Some(d) = &self.decoherence {
                d.apply(&mut rho);
            }
            self.check(&rho, step)?;
        }
        Ok(QuantumState {
            rho,
            levels: state.levels,
        })
    }

    fn check(&self, rho: &C3, step: usize) -> Result<(), DeviceError> {
        let tr = rho[(0, 0)].re + rho[(1, 1)].re + rho[(2, 2)].re;
        if !((tr - 1.0).abs() <= self.tolerance) {
            return Err(DeviceError::Integration {
                step,
                reason: format!("trace {tr}"),
            });
        }
        let mut herm = 0.0f64;
        for i in 0..3 {
            herm = herm.max(rho[(i, i)].im.abs());
            for j in i + 1..3 {
                herm = herm.max((rho[(i, j)] - rho[(j, i)].conj()).norm_sqr().sqrt());
            }
        }
        if !(herm <= 0.1 * self.tolerance) {
            return Err(DeviceError::Integration {
                step,
                reason: format!("hermiticity error {herm}"),
            });
        }
        Ok(())
    }
}

/// Integrates the rotating-frame Hamiltonian over piecewise-constant
/// baseband samples of length `dt`, with decoherence per step.
pub fn evolve(
    state: &QuantumState,
    envelope: &[Complex64],
    frame_freq: f64,
    model: &DeviceModel,
    dt: f64,
) -> Result<QuantumState, DeviceError> {
    Propagator::new(model, frame_freq, dt, EvolveOptions::default())?.run(state, envelope)
}

/// Lab-frame validation integrator for short pulses: the real DAC output
/// `samples` (full-scale units, held for `1/sample_rate` each) couples as
/// `rabi · V(t) · (a + a†)`. The result is expressed in the frame rotating
/// at `frame_freq`. Coherent only.
pub fn evolve_lab_frame(
    state: &QuantumState,
    samples: &[f64],
    sample_rate: f64,
    first_sample: i64,
    frame_freq: f64,
    model: &DeviceModel,
    substeps: usize,
) -> Result<QuantumState, DeviceError> {
    model.validate()?;
    let substeps = substeps.max(1);
    let w01 = TAU * model.f01_hz;
    let e = if model.levels == 3 {
        [0.0, w01, 2.0 * w01 - model.anharmonicity_rad()]
    } else {
        [0.0, w01, 0.0]
    };
    let g12 = if model.levels == 3 { SQRT_2 } else { 0.0 };
    let dt = 1.0 / (sample_rate * substeps as f64);
    let to_lab = |t: f64| {
        let wr = TAU * frame_freq;
        C3::from_diagonal(&nalgebra::Vector3::new(
            c(1.0, 0.0),
            Complex64::from_polar(1.0, -wr * t),
            Complex64::from_polar(1.0, -2.0 * wr * t),
        ))
    };
    let t0 = first_sample as f64 / sample_rate;
    let r0 = to_lab(t0);
    let mut rho = r0 * state.rho * r0.adjoint();
    for &v in samples {
        let x = model.rabi_per_fullscale * v;
        let h = C3::new(
            c(e[0], 0.0),
            c(x, 0.0),
            ZERO,
            c(x, 0.0),
            c(e[1], 0.0),
            c(x * g12, 0.0),
            ZERO,
            c(x * g12, 0.0),
            c(e[2], 0.0),
        );
        let u = expm_hermitian(&h, dt);
        for _ in 0..substeps {
            rho = u * rho * u.adjoint();
        }
    }
    let t1 = t0 + samples.len() as f64 / sample_rate;
    let r1 = to_lab(t1).adjoint();
    let rho = r1 * rho * r1.adjoint();
    let out = QuantumState {
        rho,
        levels: state.levels,
    };
    out.validate(1e-8)
        .map_err(|reason| DeviceError::Integration {
            step: samples.len(),
            reason,
        })?;
    Ok(out)
}

/// Probability that a single shot reports `0`.
pub fn report_zero_probability(state: &QuantumState, model: &DeviceModel) -> f64 {
    let p0 = 1.0 - state.p_excited();
    let f = model.readout_fidelity;
    p0 * f + (1.0 - p0) * (1.0 - f)
}

/// One single-shot measurement; `true` means the shot reported "excited".
pub fn measure(state: &QuantumState, model: &DeviceModel, rng: &mut impl Rng) -> bool {
    let excited = rng.random::<f64>() < state.p_excited();
    let flip = rng.random::<f64>() >= model.readout_fidelity;
    excited ^ flip
}

/// Stylized homodyne amplitude `(1 − droop)(s0 + (s1 − s0) P_excited)`.
pub fn readout_amplitude(state: &QuantumState, droop: f64, levels: &ReadoutLevels) -> f64 {
    (1.0 - droop) * (levels.s0 + (levels.s1 - levels.s0) * state.p_excited())
}

/// Error of the idle channel over one gate: `1 − [½ + e^{−τ/T2}/3 + e^{−τ/T1}/6]`.
pub fn coherence_limit_epg(gate_length: f64, model: &DeviceModel) -> f64 {
    let loss = |t: Option<f64>| t.map_or(0.0, |t| -(-gate_length / t).exp_m1());
    loss(model.t2_s) / 3.0 + loss(model.t1_s) / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coherent2() -> DeviceModel {
        DeviceModel::default().coherent().with_levels(2)
    }

    #[test]
    fn default_rabi_calibration() {
        let m = DeviceModel::default();
        assert_relative_eq!(m.rabi_per_fullscale, 2.881e9, max_relative = 1e-3);
        m.validate().unwrap();
    }

    #[test]
    fn invalid_models_rejected() {
        let m = DeviceModel {
            t2_s: Some(200e-6),
            ..DeviceModel::default()
        };
        assert!(m.validate().is_err());
        let m = DeviceModel::default().with_levels(4);
        assert!(m.validate().is_err());
        let m = DeviceModel {
            t2_s: None,
            ..DeviceModel::default()
        };
        assert!(m.validate().is_err());
        let m: Result<DeviceModel, _> = serde_json::from_str(r#"{"f01": 1}"#);
        assert!(m.is_err());
        let m: DeviceModel = serde_json::from_str(r#"{"t1_s": null, "t2_s": null}"#).unwrap();
        assert!(!m.has_decoherence());
    }

    #[test]
    fn zero_drive_without_decoherence_is_identity() {
        let m = DeviceModel::default().coherent();
        let s = QuantumState::pure(3, [c(0.6, 0.0), c(0.0, 0.8), ZERO]);
        let out = evolve(&s, &vec![ZERO; 1000], m.f01_hz, &m, 1e-10).unwrap();
        assert!((out.rho - s.rho).norm() < 1e-12);
    }

    #[test]
    fn resonant_pi_rotation() {
        let m = coherent2();
        let dt = 1e-10;
        let n = 200;
        let z = c(PI / (m.rabi_per_fullscale * dt * n as f64), 0.0);
        let out = evolve(&QuantumState::ground(2), &vec![z; n], m.f01_hz, &m, dt).unwrap();
        assert!((out.populations()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phase_sets_rotation_axis() {
        let m = coherent2();
        let dt = 1e-10;
        let n = 100;
        let amp = PI / 2.0 / (m.rabi_per_fullscale * dt * n as f64);
        let y = Complex64::from_polar(amp, -PI / 2.0);
        let out = evolve(&QuantumState::ground(2), &vec![y; n], m.f01_hz, &m, dt).unwrap();
        // A +π/2 rotation about +Y takes |0> to |+>.
        assert_relative_eq!(out.rho[(0, 1)].re, 0.5, epsilon = 1e-9);
        assert!(out.rho[(0, 1)].im.abs() < 1e-9);
    }

    #[test]
    fn amplitude_damping_matches_exponential() {
        let m = DeviceModel::default().with_levels(2);
        let dt = 1e-9;
        let n = 20_000;
        let out = evolve(&QuantumState::excited(2), &vec![ZERO; n], m.f01_hz, &m, dt).unwrap();
        let t = dt * n as f64;
        assert_relative_eq!(
            out.populations()[1],
            (-t / 51e-6).exp(),
            max_relative = 1e-4
        );
    }

    #[test]
    fn coherence_decays_at_t2() {
        let m = DeviceModel::default();
        let s = QuantumState::pure(3, [c(1.0, 0.0), c(1.0, 0.0), ZERO]);
        let p = Propagator::new(&m, m.f01_hz, 1e-9, EvolveOptions::default()).unwrap();
        let out = p.idle(&s, 10_000).unwrap();
        assert_relative_eq!(
            out.rho[(0, 1)].norm(),
            0.5 * (-10e-6 / 32e-6f64).exp(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn kraus_operators_are_complete_and_match_fast_path() {
        let m = DeviceModel::default();
        for dt in [1e-10, 1e-7, 5e-5] {
            let ks = DecoherenceStep::kraus(&m, dt);
            let sum = ks.iter().fold(C3::zeros(), |acc, k| acc + k.adjoint() * k);
            assert!((sum - C3::identity()).norm() < 1e-12, "dt={dt}");
            let s = QuantumState::pure(3, [c(0.5, 0.1), c(0.3, -0.6), c(0.2, 0.4)]);
            let via_kraus = ks
                .iter()
                .fold(C3::zeros(), |acc, k| acc + k * s.rho * k.adjoint());
            let mut fast = s.rho;
            DecoherenceStep::new(&m, dt).apply(&mut fast);
            assert!((via_kraus - fast).norm() < 1e-12);
        }
    }

    #[test]
    fn measurement_statistics() {
        let m = DeviceModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let g = QuantumState::ground(3);
        let zeros = (0..n).filter(|_| !measure(&g, &m, &mut rng)).count() as f64 / n as f64;
        assert!((zeros - 0.93).abs() < 5.0 * (0.93f64 * 0.07 / n as f64).sqrt());
        assert_relative_eq!(report_zero_probability(&g, &m), 0.93, epsilon = 1e-15);

        let mixed = QuantumState {
            rho: C3::from_diagonal(&nalgebra::Vector3::new(c(0.5, 0.0), c(0.5, 0.0), ZERO)),
            levels: 2,
        };
        assert_relative_eq!(report_zero_probability(&mixed, &m), 0.5, epsilon = 1e-15);

        let perfect = DeviceModel {
            readout_fidelity: 1.0,
            ..m
        };
        let e = QuantumState::excited(2);
        assert!((0..1000).all(|_| measure(&e, &perfect, &mut rng)));
    }

    #[test]
    fn readout_amplitude_levels() {
        let levels = ReadoutLevels { s0: 1.0, s1: 0.4 };
        assert_relative_eq!(
            readout_amplitude(&QuantumState::ground(3), 0.0, &levels),
            1.0
        );
        assert_relative_eq!(
            readout_amplitude(&QuantumState::excited(3), 0.0, &levels),
            0.4
        );
        assert_relative_eq!(
            readout_amplitude(&QuantumState::ground(3), 0.2, &levels),
            0.8,
            epsilon = 1e-15
        );
        let lvl2 = QuantumState::basis(3, 2);
        assert_relative_eq!(readout_amplitude(&lvl2, 0.0, &levels), 0.4);
    }

    #[test]
    fn coherence_limit_values() {
        let m = DeviceModel::default();
        assert_relative_eq!(coherence_limit_epg(29e-9, &m), 3.97e-4, max_relative = 5e-3);
        assert_eq!(coherence_limit_epg(0.0, &m), 0.0);
        assert_eq!(coherence_limit_epg(1e-6, &m.coherent()), 0.0);
    }

    #[test]
    fn state_csv_dump() {
        let mut out = Vec::new();
        QuantumState::ground(2).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("row,col,re,im"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn evolution_preserves_density_matrix(
            amps in proptest::collection::vec((-0.3f64..0.3, -0.3f64..0.3), 1..400),
            detune in -5e7f64..5e7,
        ) {
            let m = DeviceModel::default();
            let env: Vec<Complex64> = amps.iter().map(|&(a, b)| c(a, b)).collect();
            let out = evolve(&QuantumState::ground(3), &env, m.f01_hz + detune, &m, 7e-11).unwrap();
            prop_assert!((out.trace() - 1.0).abs() < 1e-9);
            prop_assert!(out.hermiticity_error() < 1e-10);
            prop_assert!(out.min_eigenvalue() > -1e-9);
        }

        #[test]
        fn two_level_never_leaks(amps in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
            let m = DeviceModel::default().with_levels(2);
            let env: Vec<Complex64> = amps.iter().map(|&a| c(a, 0.3 * a)).collect();
            let out = evolve(&QuantumState::ground(2), &env, m.f01_hz, &m, 7e-11).unwrap();
            prop_assert!(out.populations()[2].abs() < 1e-15);
        }
    }
}
