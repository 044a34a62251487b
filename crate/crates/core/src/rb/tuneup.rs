//! Automated pulse tune-up by error amplification.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::chain::{compile_shapes, ControlChain, RbMode};
use crate::dds::{DacConfig, DEFAULT_CUTOFF};
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::pulse::{primitive_to_shape, CalibrationTable, PrimitiveGate, PulseShape};

const SEARCH_POINTS: usize = 25;

fn default_mode() -> RbMode {
    RbMode::Hybrid
}
fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}
fn default_ideal_rate() -> f64 {
    10e9
}
fn default_max_iterations() -> usize {
    20
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}
fn default_scan_points() -> usize {
    41
}
fn default_reps() -> Vec<usize> {
    vec![1, 3, 5, 7, 9, 11]
}
fn default_pairs() -> usize {
    10
}
fn default_beta_range() -> (f64, f64) {
    (-1.0, 3.0)
}
fn default_stark_range() -> (f64, f64) {
    (-0.5, 2.5)
}
fn default_search_mode() -> RbMode {
    RbMode::Ideal
}
fn default_search_rounds() -> usize {
    2
}

/// Tune-up settings. Simulations are coherent and use exact populations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneUpOptions {
    #[serde(default = "default_mode")]
    pub mode: RbMode,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default = "default_ideal_rate")]
    pub ideal_sample_rate: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Per-pulse rotation-angle error (rad) at which amplitudes are accepted.
    #[serde(default = "default_tolerance")]
    pub angle_tolerance: f64,
    #[serde(default = "default_true")]
    pub coarse_scan: bool,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
    /// Odd numbers of π pulses following the π/2 pulse.
    #[serde(default = "default_reps")]
    pub amplification_reps: Vec<usize>,
    /// `[Xπ, X−π]` pairs used for the leakage and Stark searches.
    #[serde(default = "default_pairs")]
    pub leakage_pairs: usize,
    #[serde(default = "default_beta_range")]
    pub beta_range: (f64, f64),
    /// Stark-rate search range in units of `rabi² / (2δ)`.
    #[serde(default = "default_stark_range")]
    pub stark_range: (f64, f64),
    /// Iterations in which the β and Stark searches run (3-level only).
    #[serde(default = "default_search_rounds")]
    pub search_rounds: usize,
    /// Chain used by the β and Stark searches. At 8 bits the quantization
    /// leakage of a single pulse exceeds the DRAG-dependent part, so the
    /// default searches on analytic envelopes.
    #[serde(default = "default_search_mode")]
    pub search_mode: RbMode,
}

impl Default for TuneUpOptions {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            cutoff: default_cutoff(),
            ideal_sample_rate: default_ideal_rate(),
            max_iterations: default_max_iterations(),
            angle_tolerance: default_tolerance(),
            coarse_scan: true,
            scan_points: default_scan_points(),
            amplification_reps: default_reps(),
            leakage_pairs: default_pairs(),
            beta_range: default_beta_range(),
            stark_range: default_stark_range(),
            search_rounds: default_search_rounds(),
            search_mode: default_search_mode(),
        }
    }
}

/// One tune-up iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneUpStep {
    pub iteration: usize,
    pub a_pi: f64,
    pub a_pi_2: f64,
    pub beta: f64,
    pub stark_rad_s: f64,
    /// Measured per-pulse angle errors before this iteration's correction.
    pub eps_pi: f64,
    pub eps_pi_2: f64,
}

/// Tuned table plus convergence record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneUpReport {
    pub calibration: CalibrationTable,
    pub iterations: usize,
    pub eps_pi: f64,
    pub eps_pi_2: f64,
    /// |2⟩ population after the leakage sequence with the final table.
    pub leakage: f64,
    pub history: Vec<TuneUpStep>,
}

struct Bench {
    chain: ControlChain,
}

impl Bench {
    fn populations(&self, shapes: &[PulseShape]) -> Result<[f64; 3]> {
        let dev = &self.chain.device;
        let schedule = compile_shapes(shapes, dev.f01_hz, dev.anharmonicity_rad());
        let u = self.chain.unitary(&schedule)?;
        Ok([
            u[(0, 0)].norm_sqr(),
            u[(1, 0)].norm_sqr(),
            u[(2, 0)].norm_sqr(),
        ])
    }

    fn gates(&self, gates: &[PrimitiveGate], calib: &CalibrationTable) -> Result<[f64; 3]> {
        let shapes = gates
            .iter()
            .map(|&g| primitive_to_shape(g, calib))
            .collect::<Result<Vec<_>, _>>()?;
        self.populations(&shapes)
    }

    fn not_ground(&self, gates: &[PrimitiveGate], calib: &CalibrationTable) -> Result<f64> {
        Ok(1.0 - self.gates(gates, calib)?[0])
    }

    fn pair_shapes(calib: &CalibrationTable, pairs: usize) -> Result<Vec<PulseShape>> {
        let plus = primitive_to_shape(PrimitiveGate::X180, calib)?;
        let mut minus = plus;
        minus.amplitude = -plus.amplitude;
        Ok((0..pairs).flat_map(|_| [plus, minus]).collect())
    }

    /// Populations after `pairs` repetitions of `[Xπ, X−π]`.
    fn pairs(&self, calib: &CalibrationTable, pairs: usize) -> Result<[f64; 3]> {
        self.populations(&Self::pair_shapes(calib, pairs)?)
    }

    /// Mean |2⟩ population over the pulse boundaries of the pair sequence.
    fn pair_leakage(&self, calib: &CalibrationTable, pairs: usize) -> Result<f64> {
        let shapes = Self::pair_shapes(calib, pairs)?;
        let dev = &self.chain.device;
        let schedule = compile_shapes(&shapes, dev.f01_hz, dev.anharmonicity_rad());
        let ends: Vec<f64> = shapes
            .iter()
            .scan(0.0, |t, s| {
                *t += s.total_duration();
                Some(*t)
            })
            .collect();
        let traj = self.chain.populations_at(&schedule, &ends)?;
        Ok(traj.iter().map(|p| p[2]).sum::<f64>() / traj.len() as f64)
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Minimizes a unimodal `f` over `[a, b]` to an interval width `tol`.
fn golden_section(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Grid search over `[a, b]` followed by a golden-section refinement
/// around the best grid point.
fn scan_minimize(
    mut f: impl FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    points: usize,
    tol: f64,
) -> Result<f64> {
    let step = (b - a) / (points - 1) as f64;
    let mut best = (a, f64::INFINITY);
    for k in 0..points {
        let x = a + k as f64 * step;
        let y = f(x)?;
        if y < best.1 {
            best = (x, y);
        }
    }
    golden_section(f, (best.0 - step).max(a), (best.0 + step).min(b), tol)
}

/// Amplitude giving a π rotation for an ideal two-level drive.
fn analytic_pi_amplitude(device: &DeviceModel, calib: &CalibrationTable) -> Result<f64> {
    let unit = PulseShape::new(
        calib.sigma_s,
        calib.truncation,
        1.0,
        0.0,
        0.0,
        calib.buffer_s,
    )?;
    Ok(PI / (device.rabi_per_fullscale * unit.unit_area()))
}

/// Tunes `a_π`, `a_π/2`, β and the Stark rate against the simulated chain.
pub fn tune_up(
    device: &DeviceModel,
    dac: &DacConfig,
    initial: &CalibrationTable,
    options: &TuneUpOptions,
) -> Result<TuneUpReport> {
    device.validate()?;
    dac.validate()?;
    if options.amplification_reps.len() < 2 {
        return Err(Error::Config(
            "need at least two amplification lengths".into(),
        ));
    }
    let make_bench = |mode| {
        let mut chain = ControlChain::new(device.coherent(), *dac, mode);
        chain.cutoff = options.cutoff;
        chain.ideal_sample_rate = options.ideal_sample_rate;
        chain.decoherence = false;
        Bench { chain }
    };
    let bench = make_bench(options.mode);
    let search_bench = make_bench(options.search_mode);
    let three_level = device.levels == 3;
    let tol = options.angle_tolerance;

    let mut calib = *initial;
    let a0 = match calib.a_pi {
        Some(a) => a,
        None => analytic_pi_amplitude(device, &calib)?,
    };
    calib.a_pi = Some(a0);
    calib.a_pi_2 = Some(calib.a_pi_2.unwrap_or(0.5 * a0));

    if options.coarse_scan {
        let a = coarse_rabi(&bench, &calib, a0, options.scan_points.max(5))?;
        calib.a_pi_2 = calib.a_pi_2.map(|h| h * a / a0);
        calib.a_pi = Some(a);
    }

    let stark_unit = device.rabi_per_fullscale.powi(2) / (2.0 * device.anharmonicity_rad());
    let mut history = Vec::new();
    let mut pi_loop = AmplitudeLoop::default();
    let mut half_loop = AmplitudeLoop::default();
    for iteration in 1..=options.max_iterations {
        let eps_pi = amplify_pi(&bench, &calib, &options.amplification_reps)?;
        let a = calib.a_pi.expect("set above");
        calib.a_pi = Some(pi_loop.update(a, eps_pi, PI));
        let eps_pi_2 = amplify_half(&bench, &calib, &options.amplification_reps)?;
        let a = calib.a_pi_2.expect("set above");
        calib.a_pi_2 = Some(half_loop.update(a, eps_pi_2, FRAC_PI_2));
        let searching = three_level && iteration <= options.search_rounds;
        if searching {
            let pairs = options.leakage_pairs;
            let (lo, hi) = options.beta_range;
            calib.beta = scan_minimize(
                |beta| search_bench.pair_leakage(&CalibrationTable { beta, ..calib }, pairs),
                lo,
                hi,
                SEARCH_POINTS,
                1e-3 * (hi - lo),
            )?;
            let (lo, hi) = options.stark_range;
            let kappa = scan_minimize(
                |k| {
                    let trial = CalibrationTable {
                        stark_rad_s: k * stark_unit,
                        ..calib
                    };
                    Ok(1.0 - search_bench.pairs(&trial, pairs)?[0])
                },
                lo,
                hi,
                SEARCH_POINTS,
                1e-4 * (hi - lo),
            )?;
            calib.stark_rad_s = kappa * stark_unit;
        }
        history.push(TuneUpStep {
            iteration,
            a_pi: calib.a_pi.unwrap_or_default(),
            a_pi_2: calib.a_pi_2.unwrap_or_default(),
            beta: calib.beta,
            stark_rad_s: calib.stark_rad_s,
            eps_pi,
            eps_pi_2,
        });
        if !searching && eps_pi.abs() < tol && eps_pi_2.abs() < tol {
            let leakage = bench.pairs(&calib, options.leakage_pairs)?[2];
            return Ok(TuneUpReport {
                calibration: calib,
                iterations: iteration,
                eps_pi,
                eps_pi_2,
                leakage,
                history,
            });
        }
    }
    Err(Error::TuneUp(format!(
        "amplitudes did not converge to {tol} rad in {} iterations (last step {:?})",
        options.max_iterations, history
    )))
}

/// Scans single-pulse amplitudes in `[0.6, 1.4]·a0` and returns the
/// parabolic peak of the excited population.
fn coarse_rabi(bench: &Bench, calib: &CalibrationTable, a0: f64, points: usize) -> Result<f64> {
    let lo = 0.6 * a0;
    let hi = (1.4 * a0).min(1.0);
    let step = (hi - lo) / (points - 1) as f64;
    let amps: Vec<f64> = (0..points).map(|k| lo + step * k as f64).collect();
    let mut p = Vec::with_capacity(points);
    for &a in &amps {
        let trial = CalibrationTable {
            a_pi: Some(a),
            ..*calib
        };
        p.push(bench.not_ground(&[PrimitiveGate::X180], &trial)?);
    }
    let best = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    if best == 0 || best == points - 1 {
        return Err(Error::TuneUp(format!(
            "Rabi maximum not bracketed by [{lo}, {hi}] around guess {a0}"
        )));
    }
    let (y0, y1, y2) = (p[best - 1], p[best], p[best + 1]);
    let curvature = y0 - 2.0 * y1 + y2;
    let offset = if curvature < 0.0 {
        0.5 * (y0 - y2) / curvature
    } else {
        0.0
    };
    Ok(amps[best] + offset * step)
}

/// `Xπ/2` followed by odd numbers of `Xπ`; returns the per-pulse `Xπ` error.
fn amplify_pi(bench: &Bench, calib: &CalibrationTable, reps: &[usize]) -> Result<f64> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &n in reps {
        let mut gates = vec![PrimitiveGate::X90];
        gates.extend(std::iter::repeat_n(PrimitiveGate::X180, n));
        x.push(n as f64);
        y.push(bench.not_ground(&gates, calib)?);
    }
    Ok(-2.0 * slope(&x, &y))
}

/// Runs of `4j + 1` `Xπ/2` pulses; returns the per-pulse `Xπ/2` error.
fn amplify_half(bench: &Bench, calib: &CalibrationTable, reps: &[usize]) -> Result<f64> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for j in 0..reps.len() {
        let n = 4 * j + 1;
        x.push(n as f64);
        y.push(bench.not_ground(&vec![PrimitiveGate::X90; n], calib)?);
    }
    Ok(2.0 * slope(&x, &y))
}

/// Amplitude update for a measured rotation error. Uses the secant through
/// the previous measurement when its slope is within a factor of four of the
/// proportional model `dε/da = target/a`, otherwise the proportional step.
#[derive(Default)]
struct AmplitudeLoop {
    prev: Option<(f64, f64)>,
}

impl AmplitudeLoop {
    fn update(&mut self, a: f64, eps: f64, target: f64) -> f64 {
        let nominal = target / a;
        let gain = match self.prev {
            Some((a0, e0)) if a != a0 => {
                let s = (eps - e0) / (a - a0);
                if s / nominal > 0.25 && s / nominal < 4.0 {
                    s
                } else {
                    nominal
                }
            }
            _ => nominal,
        };
        self.prev = Some((a, eps));
        let next = a - eps / gain;
        if next > 0.0 {
            next
        } else {
            a * target / (target + eps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rotation_z, C2};

    /// Ground-truth per-pulse rotation-angle error of a single primitive,
    /// removing the frame update that follows it.
    pub(crate) fn angle_error(
        device: &DeviceModel,
        calib: &CalibrationTable,
        gate: PrimitiveGate,
        mode: RbMode,
    ) -> f64 {
        let chain = ControlChain::new(device.coherent(), DacConfig::default(), mode);
        let shape = primitive_to_shape(gate, calib).unwrap();
        let s = compile_shapes(&[shape], device.f01_hz, device.anharmonicity_rad());
        let u = chain.unitary(&s).unwrap();
        let v = rotation_z(-shape.total_stark_phase())
            * C2::new(u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
        let half = 0.5 * v.trace().norm();
        let target = gate.rotation().0.abs();
        let angle = 2.0 * half.clamp(0.0, 1.0).acos();
        (angle - target).abs()
    }

    fn ideal_opts() -> TuneUpOptions {
        TuneUpOptions {
            mode: RbMode::Ideal,
            ..TuneUpOptions::default()
        }
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| Ok((x - 0.37).powi(2)), -1.0, 3.0, 1e-8).unwrap();
        assert!((x - 0.37).abs() < 1e-7);
    }

    #[test]
    fn two_level_converges_from_twenty_percent_high() {
        let device = DeviceModel::default().with_levels(2);
        let a = crate::device::REFERENCE_PI_AMPLITUDE * 1.2;
        let initial = CalibrationTable::default().with_amplitudes(a, a / 2.0);
        let report = tune_up(&device, &DacConfig::default(), &initial, &ideal_opts()).unwrap();
        assert!(report.iterations <= 10, "{report:?}");
        assert_eq!(report.calibration.beta, initial.beta);
        assert_eq!(report.calibration.stark_rad_s, 0.0);
        for g in [PrimitiveGate::X180, PrimitiveGate::X90] {
            let e = angle_error(&device, &report.calibration, g, RbMode::Ideal);
            assert!(e < 1e-4, "{g}: {e}");
        }
    }

    #[test]
    fn perfect_table_is_a_fixed_point() {
        let device = DeviceModel::default().with_levels(2);
        let first = tune_up(
            &device,
            &DacConfig::default(),
            &CalibrationTable::default(),
            &ideal_opts(),
        )
        .unwrap();
        let again = tune_up(
            &device,
            &DacConfig::default(),
            &first.calibration,
            &ideal_opts(),
        )
        .unwrap();
        let (a, b) = (first.calibration, again.calibration);
        assert!((a.a_pi.unwrap() / b.a_pi.unwrap() - 1.0).abs() < 1e-4);
        assert!((a.a_pi_2.unwrap() / b.a_pi_2.unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn unbracketed_scan_fails() {
        let device = DeviceModel::default().with_levels(2);
        let a = crate::device::REFERENCE_PI_AMPLITUDE * 2.0;
        let initial = CalibrationTable::default().with_amplitudes(a, a / 2.0);
        let err = tune_up(&device, &DacConfig::default(), &initial, &ideal_opts()).unwrap_err();
        assert!(matches!(err, Error::TuneUp(_)), "{err}");
    }

    #[test]
    fn three_level_tune_up_suppresses_leakage_and_angle_errors() {
        let device = DeviceModel::default();
        let report = tune_up(
            &device,
            &DacConfig::default(),
            &CalibrationTable::default(),
            &ideal_opts(),
        )
        .unwrap();
        let cal = report.calibration;
        assert!((cal.beta - 1.0).abs() < 0.3, "{cal:?}");
        assert!(report.leakage < 1e-5, "{}", report.leakage);
        for g in [PrimitiveGate::X180, PrimitiveGate::X90] {
            let e = angle_error(&device, &cal, g, RbMode::Ideal);
            assert!(e < 1e-3, "{g}: {e}");
        }
    }
}
