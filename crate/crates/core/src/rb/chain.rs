//! Primitive schedule → waveform → qubit state.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dds::{
    activity_mask, quantize, render_ideal, render_with_activity, sample_span, Baseband, DacConfig,
    Demodulator, DistortionModel, Envelope, FlatPulse, TimedPulse, ToneSpec,
};
use crate::device::{DeviceModel, EvolveOptions, Propagator, QuantumState};
use crate::error::{DdsError, Result};
use crate::linalg::C3;
use crate::pulse::{primitive_to_shape, CalibrationTable, PrimitiveGate, PulseShape};

/// Signal chain used to turn a schedule into qubit dynamics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbMode {
    /// Analytic baseband, no DAC, coherent evolution.
    Ideal,
    /// Qubit tone synthesized and quantized by the DAC, demodulated, evolved
    /// with decoherence; single-shot readout with assignment errors.
    #[default]
    Hybrid,
    /// As `Hybrid`, plus a readout tone on the same DAC with amplitude droop
    /// and homodyne amplitude readout.
    FullDds,
}

fn default_ro_amplitude() -> f64 {
    0.5
}
fn default_ro_duration() -> f64 {
    1e-6
}

/// Readout tone played after the qubit gates in full-DDS mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutPulse {
    #[serde(default = "default_ro_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_ro_duration")]
    pub duration: f64,
}

impl Default for ReadoutPulse {
    fn default() -> Self {
        Self {
            amplitude: default_ro_amplitude(),
            duration: default_ro_duration(),
        }
    }
}

/// Qubit-tone schedule with frame updates already folded into pulse phases.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub tone: ToneSpec,
    /// End of the last gate including its buffer.
    pub end: f64,
    /// Accumulated virtual-Z frame after the last gate.
    pub final_frame: f64,
}

/// Lays `shapes` back to back from t = 0, advancing the frame by each
/// pulse's Stark phase.
pub fn compile_shapes(shapes: &[PulseShape], carrier: f64, drag_reference: f64) -> Schedule {
    let mut tone = ToneSpec::new(carrier);
    tone.drag_reference = drag_reference;
    let mut t = 0.0;
    let mut frame = 0.0;
    for shape in shapes {
        if shape.amplitude != 0.0 {
            tone.pulses.push(TimedPulse {
                start: t,
                envelope: Envelope::Drag(*shape),
                frame_phase: frame,
            });
            frame += shape.total_stark_phase();
        }
        t += shape.total_duration();
    }
    Schedule {
        tone,
        end: t,
        final_frame: frame,
    }
}

/// Maps primitives through the calibration table and compiles them.
pub fn compile_gates(
    gates: &[PrimitiveGate],
    calib: &CalibrationTable,
    device: &DeviceModel,
) -> Result<Schedule> {
    let shapes = gates
        .iter()
        .map(|&g| primitive_to_shape(g, calib))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compile_shapes(
        &shapes,
        device.f01_hz,
        device.anharmonicity_rad(),
    ))
}

/// Result of running one schedule through the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    /// State at the start of readout.
    pub state: QuantumState,
    /// Measured readout-tone gain `1 − droop` (full-DDS only).
    pub readout_gain: Option<f64>,
}

/// First sample index and per-sample drive activity.
type Activity = (i64, Vec<bool>);

/// Device, DAC and chain settings shared by every sequence of a campaign.
#[derive(Clone, Debug)]
pub struct ControlChain {
    pub device: DeviceModel,
    pub dac: DacConfig,
    pub mode: RbMode,
    pub cutoff: f64,
    pub ideal_sample_rate: f64,
    pub readout_delay: f64,
    pub readout: ReadoutPulse,
    pub distortion: DistortionModel,
    pub decoherence: bool,
}

impl ControlChain {
    pub fn new(device: DeviceModel, dac: DacConfig, mode: RbMode) -> Self {
        Self {
            device,
            dac,
            mode,
            cutoff: crate::dds::DEFAULT_CUTOFF,
            ideal_sample_rate: 10e9,
            readout_delay: 120e-9,
            readout: ReadoutPulse::default(),
            distortion: DistortionModel::default(),
            decoherence: true,
        }
    }

    fn margin(&self) -> f64 {
        3.0 / self.cutoff
    }

    fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions {
            decoherence: self.decoherence && self.mode != RbMode::Ideal,
            ..EvolveOptions::default()
        }
    }

    /// Qubit-frame baseband seen by the qubit for `schedule`, before any
    /// readout.
    pub fn baseband(&self, schedule: &Schedule) -> Result<Baseband> {
        match self.mode {
            RbMode::Ideal => {
                let rate = self.ideal_sample_rate;
                let len = (schedule.end * rate).ceil() as usize + 1;
                Ok(Baseband::analytic(
                    std::slice::from_ref(&schedule.tone),
                    self.device.f01_hz,
                    rate,
                    0.0,
                    len,
                ))
            }
            RbMode::Hybrid | RbMode::FullDds => Ok(self.dac_baseband(schedule, false)?.0),
        }
    }

    /// Synthesized, quantized and demodulated qubit tone, optionally with
    /// its activity mask starting at the returned first sample.
    fn dac_baseband(
        &self,
        schedule: &Schedule,
        with_activity: bool,
    ) -> Result<(Baseband, Option<Activity>)> {
        let fs = self.dac.sample_rate;
        let margin = self.margin();
        let (first, len) = sample_span(fs, (-margin, schedule.end + margin))?;
        let tones = std::slice::from_ref(&schedule.tone);
        let (ideal, activity) = if with_activity {
            let (ideal, mask) =
                render_with_activity(tones, fs, first, len, self.distortion.activity_threshold)?;
            (ideal, Some((first, mask)))
        } else {
            (render_ideal(tones, fs, first, len, None)?, None)
        };
        let w = quantize(ideal, &self.dac, first)?;
        let demod = Demodulator::new(fs, self.device.f01_hz, self.cutoff, None)?;
        Ok((demod.process(&w.quantized(), first), activity))
    }

    pub fn propagator(&self, dt: f64) -> Result<Propagator> {
        Ok(Propagator::new(
            &self.device,
            self.device.f01_hz,
            dt,
            self.evolve_options(),
        )?)
    }

    /// Coherent 3×3 propagator of the schedule in the qubit frame.
    pub fn unitary(&self, schedule: &Schedule) -> Result<C3> {
        let bb = self.baseband(schedule)?;
        let prop = Propagator::new(
            &self.device,
            self.device.f01_hz,
            bb.dt(),
            EvolveOptions {
                decoherence: false,
                ..EvolveOptions::default()
            },
        )?;
        Ok(prop.unitary(&bb.samples))
    }

    /// Coherent populations, starting from the ground state, at each of the
    /// ascending `times` (clamped to the end of the evolved window).
    pub fn populations_at(&self, schedule: &Schedule, times: &[f64]) -> Result<Vec<[f64; 3]>> {
        let bb = self.baseband(schedule)?;
        let prop = Propagator::new(
            &self.device,
            self.device.f01_hz,
            bb.dt(),
            EvolveOptions {
                decoherence: false,
                ..EvolveOptions::default()
            },
        )?;
        let pops = |psi: &nalgebra::Vector3<Complex64>| {
            [psi[0].norm_sqr(), psi[1].norm_sqr(), psi[2].norm_sqr()]
        };
        let mut psi = nalgebra::Vector3::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        );
        let mut out = Vec::with_capacity(times.len());
        let mut next = times.iter().peekable();
        for (j, &z) in bb.samples.iter().enumerate() {
            while next.peek().is_some_and(|&&t| bb.time(j) >= t) {
                next.next();
                out.push(pops(&psi));
            }
            psi = prop.step_unitary(z) * psi;
        }
        out.extend(next.map(|_| pops(&psi)));
        Ok(out)
    }

    /// Runs `schedule` from the ground state up to the start of readout.
    pub fn simulate(&self, schedule: &Schedule) -> Result<Outcome> {
        let (bb, activity) = match self.mode {
            RbMode::FullDds => self.dac_baseband(schedule, true)?,
            _ => (self.baseband(schedule)?, None),
        };
        let prop = self.propagator(bb.dt())?;
        let state = prop.run(&QuantumState::ground(self.device.levels), &bb.samples)?;
        let evolved_until = bb.time(bb.samples.len());
        let wait = schedule.end + self.readout_delay - evolved_until;
        let steps = (wait.max(0.0) / bb.dt()).round() as usize;
        let state = prop.idle(&state, steps)?;
        let readout_gain = match activity {
            Some((first, mask)) => Some(self.readout_gain_after(schedule, first, &mask)?),
            None => None,
        };
        Ok(Outcome {
            state,
            readout_gain,
        })
    }

    /// Synthesizes the whole experiment waveform (qubit gates followed by the
    /// readout tone, droop applied to the readout tone) and measures the gain
    /// of the readout tone by demodulating it.
    pub fn readout_gain(&self, schedule: &Schedule) -> Result<f64> {
        let fs = self.dac.sample_rate;
        let (first, len) = sample_span(fs, (-self.margin(), schedule.end + self.margin()))?;
        let mask = activity_mask(
            std::slice::from_ref(&schedule.tone),
            fs,
            first,
            len,
            self.distortion.activity_threshold,
        );
        self.readout_gain_after(schedule, first, &mask)
    }

    /// [`Self::readout_gain`] given the qubit-tone activity from `first`
    /// onwards; samples past the end of `qubit_activity` are idle.
    fn readout_gain_after(
        &self,
        schedule: &Schedule,
        first: i64,
        qubit_activity: &[bool],
    ) -> Result<f64> {
        let fs = self.dac.sample_rate;
        self.distortion.validate()?;
        let ro_start = schedule.end + self.readout_delay;
        let ro_end = ro_start + self.readout.duration;
        let mut readout = ToneSpec::new(self.device.f_readout_hz);
        readout.pulses.push(TimedPulse {
            start: ro_start,
            envelope: Envelope::Flat(FlatPulse {
                amplitude: self.readout.amplitude,
                duration: self.readout.duration,
                phase: 0.0,
            }),
            frame_phase: 0.0,
        });
        let threshold = self.distortion.activity_threshold;
        let (ro_first, ro_len) = sample_span(fs, (ro_start, ro_end))?;
        let lead = usize::try_from(ro_first - first).unwrap_or(0);
        let mut droop = self.distortion;
        droop.state = 0.0;
        let seen = lead.min(qubit_activity.len());
        droop.advance(&qubit_activity[..seen], 1.0 / fs);
        droop.idle((lead - seen) as f64 / fs);
        let tones = [schedule.tone.clone(), readout];
        let (qubit, act_q) = render_with_activity(&tones[..1], fs, ro_first, ro_len, threshold)?;
        let (mut ro, act_r) = render_with_activity(&tones[1..], fs, ro_first, ro_len, threshold)?;
        let activity: Vec<bool> = act_q.iter().zip(&act_r).map(|(a, b)| *a || *b).collect();
        droop.apply_in_place(&mut ro, &activity, 1.0 / fs);
        let total: Vec<f64> = qubit.iter().zip(&ro).map(|(q, r)| q + r).collect();
        let w = quantize(total, &self.dac, ro_first)?;
        let slice = w.quantized();
        let demod = Demodulator::new(fs, self.device.f_readout_hz, self.cutoff, None)?;
        let bb = demod.process(&slice, ro_first);
        let edge = demod.taps().len() / (2 * demod.decimation) + 1;
        if bb.samples.len() <= 2 * edge {
            return Err(DdsError::InvalidSpan(format!(
                "readout of {} s is too short to demodulate",
                self.readout.duration
            ))
            .into());
        }
        let inner = &bb.samples[edge..bb.samples.len() - edge];
        let mean: Complex64 = inner.iter().sum::<Complex64>() / inner.len() as f64;
        Ok(mean.norm() / self.readout.amplitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rotation_xy, rotation_z, C2};

    fn calib() -> CalibrationTable {
        let a = crate::device::REFERENCE_PI_AMPLITUDE;
        CalibrationTable::default().with_amplitudes(a, a / 2.0)
    }

    fn qubit_block(u: &C3) -> C2 {
        C2::new(u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)])
    }

    #[test]
    fn compile_lays_out_gates_and_frames() {
        let device = DeviceModel::default();
        let mut cal = calib();
        cal.stark_rad_s = 1e9;
        let gates = [PrimitiveGate::X180, PrimitiveGate::I, PrimitiveGate::Y90];
        let s = compile_gates(&gates, &cal, &device).unwrap();
        assert_eq!(s.tone.pulses.len(), 2);
        assert!((s.end - 3.0 * 29e-9).abs() < 1e-18);
        assert!((s.tone.pulses[1].start - 58e-9).abs() < 1e-18);
        let first = primitive_to_shape(PrimitiveGate::X180, &cal).unwrap();
        assert_eq!(s.tone.pulses[1].frame_phase, first.total_stark_phase());
        assert!(s.final_frame > s.tone.pulses[1].frame_phase);
    }

    #[test]
    fn ideal_pi_pulse_on_two_levels_is_x() {
        let device = DeviceModel::default().coherent().with_levels(2);
        let chain = ControlChain::new(device, DacConfig::default(), RbMode::Ideal);
        let mut cal = calib();
        cal.beta = 0.0;
        let s = compile_gates(&[PrimitiveGate::X180], &cal, &device).unwrap();
        let u = qubit_block(&chain.unitary(&s).unwrap());
        let fid = crate::linalg::average_gate_fidelity(&u, &rotation_xy(std::f64::consts::PI, 0.0));
        assert!(1.0 - fid < 1e-5, "{}", 1.0 - fid);
    }

    #[test]
    fn hybrid_matches_ideal_closely() {
        let device = DeviceModel::default().coherent().with_levels(2);
        let gates = [PrimitiveGate::X90, PrimitiveGate::Y180, PrimitiveGate::Xm90];
        let s = compile_gates(&gates, &calib(), &device).unwrap();
        let ideal = ControlChain::new(device, DacConfig::default(), RbMode::Ideal);
        let mut hybrid = ControlChain::new(device, DacConfig::default(), RbMode::Hybrid);
        hybrid.dac.bits = 14;
        let a = qubit_block(&ideal.unitary(&s).unwrap());
        let b = qubit_block(&hybrid.unitary(&s).unwrap());
        let fid = crate::linalg::average_gate_fidelity(&a, &b);
        assert!(1.0 - fid < 1e-5, "{}", 1.0 - fid);
    }

    #[test]
    fn stark_frame_tracks_logical_gate() {
        let device = DeviceModel::default().coherent().with_levels(2);
        let chain = ControlChain::new(device, DacConfig::default(), RbMode::Ideal);
        let mut cal = calib();
        cal.stark_rad_s = 2e8;
        let s = compile_gates(&[PrimitiveGate::X180, PrimitiveGate::X180], &cal, &device).unwrap();
        let one = compile_gates(&[PrimitiveGate::X180], &cal, &device).unwrap();
        let u = qubit_block(&chain.unitary(&s).unwrap());
        let u1 = qubit_block(&chain.unitary(&one).unwrap());
        // Second pulse is shifted by the first pulse's frame: U2 = Rz(ψ)·U1·Rz(−ψ).
        let psi = s.tone.pulses[1].frame_phase;
        let u2 = rotation_z(psi) * u1 * rotation_z(-psi);
        let fid = crate::linalg::average_gate_fidelity(&u, &(u2 * u1));
        assert!(1.0 - fid < 1e-9, "{}", 1.0 - fid);
    }

    #[test]
    fn populations_at_matches_unitary() {
        let device = DeviceModel::default().coherent();
        let chain = ControlChain::new(device, DacConfig::default(), RbMode::Ideal);
        let gates = [PrimitiveGate::X90, PrimitiveGate::Y90];
        let full = compile_gates(&gates, &calib(), &device).unwrap();
        let first = compile_gates(&gates[..1], &calib(), &device).unwrap();
        let traj = chain.populations_at(&full, &[first.end, full.end]).unwrap();
        for (pops, s) in traj.iter().zip([&first, &full]) {
            let u = chain.unitary(s).unwrap();
            for k in 0..3 {
                assert!((pops[k] - u[(k, 0)].norm_sqr()).abs() < 1e-9, "{pops:?}");
            }
        }
    }

    #[test]
    fn simulate_waits_for_readout_delay() {
        let device = DeviceModel {
            t2_s: Some(1e-6),
            t1_s: Some(1e-6),
            ..DeviceModel::default()
        };
        let mut chain = ControlChain::new(device, DacConfig::default(), RbMode::Hybrid);
        let s = compile_gates(&[PrimitiveGate::X180], &calib(), &device).unwrap();
        chain.readout_delay = 0.0;
        let short = chain.simulate(&s).unwrap().state.p_excited();
        chain.readout_delay = 500e-9;
        let long = chain.simulate(&s).unwrap().state.p_excited();
        let expect = (-(500e-9f64) / 1e-6).exp();
        assert!(
            (long / short - expect).abs() < 0.02,
            "{short} {long} {expect}"
        );
    }

    #[test]
    fn full_dds_gain_without_distortion_is_unity() {
        let device = DeviceModel::default().coherent();
        let mut chain = ControlChain::new(device, DacConfig::default(), RbMode::FullDds);
        chain.distortion = DistortionModel::disabled();
        let s = compile_gates(&[PrimitiveGate::X180; 4], &calib(), &device).unwrap();
        let out = chain.simulate(&s).unwrap();
        let g = out.readout_gain.unwrap();
        assert!((g - 1.0).abs() < 2e-3, "{g}");
    }

    #[test]
    fn full_dds_gain_reflects_droop() {
        let device = DeviceModel::default().coherent();
        let mut chain = ControlChain::new(device, DacConfig::default(), RbMode::FullDds);
        chain.distortion.tau = 1e-6;
        let s = compile_gates(&[PrimitiveGate::X180; 200], &calib(), &device).unwrap();
        let g = chain.readout_gain(&s).unwrap();
        // 5.8 µs of near-continuous drive saturates the droop at ~d_sat.
        assert!(g > 0.78 && g < 0.86, "{g}");
    }
}
