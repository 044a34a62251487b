//! Randomized benchmarking campaigns, tune-up and parameter sweeps.

mod chain;
mod distortion;
mod fit;
mod sweep;
mod tuneup;

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{generate_sequence, PRIMITIVES_PER_CLIFFORD};
use crate::dds::{DacConfig, DistortionModel, DEFAULT_CUTOFF};
use crate::device::{report_zero_probability, DeviceModel};
use crate::error::{Error, Result};
use crate::linalg::{c, C2};
use crate::pulse::CalibrationTable;
use crate::rng::{substream, Stream};

pub use chain::{
    compile_gates, compile_shapes, ControlChain, Outcome, RbMode, ReadoutPulse, Schedule,
};
pub use distortion::{background_subtract_run, BackgroundRun};
pub use fit::{epc, epg, fit_decay, Asymptote, DecayFit};
pub use sweep::{sweep, write_sweep_csv, SweepParameter, SweepRow};
pub use tuneup::{tune_up, TuneUpOptions, TuneUpReport, TuneUpStep};

/// Geometric ladder `{2, 4, …, 256, 400}`.
pub fn default_lengths() -> Vec<usize> {
    vec![2, 4, 8, 16, 32, 64, 128, 256, 400]
}
fn default_seeds() -> usize {
    20
}
fn default_shots() -> u64 {
    1000
}
fn default_delay() -> f64 {
    120e-9
}
fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}
fn default_ideal_rate() -> f64 {
    10e9
}
/// Nominal background-twin shift (Hz).
pub const NOMINAL_BACKGROUND_OFFSET: f64 = 2e9;

/// Campaign settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbConfig {
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default)]
    pub mode: RbMode,
    #[serde(default = "default_delay")]
    pub readout_delay: f64,
    /// Use exact populations instead of sampling `shots` measurements.
    #[serde(default)]
    pub exact_populations: bool,
    #[serde(default)]
    pub asymptote: Asymptote,
    /// Demodulation low-pass cutoff (Hz).
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Baseband grid for ideal mode (Hz).
    #[serde(default = "default_ideal_rate")]
    pub ideal_sample_rate: f64,
    #[serde(default)]
    pub readout: ReadoutPulse,
    /// Readout droop model (full-DDS mode).
    #[serde(default)]
    pub distortion: DistortionModel,
    /// Carrier shift of the background twin (Hz). When absent, the shift
    /// nearest +2 GHz that is a half-integer number of cycles per primitive
    /// gate is used.
    #[serde(default)]
    pub background_offset_hz: Option<f64>,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            lengths: default_lengths(),
            n_seeds: default_seeds(),
            shots: default_shots(),
            mode: RbMode::default(),
            readout_delay: default_delay(),
            exact_populations: false,
            asymptote: Asymptote::default(),
            cutoff: default_cutoff(),
            ideal_sample_rate: default_ideal_rate(),
            readout: ReadoutPulse::default(),
            distortion: DistortionModel::default(),
            background_offset_hz: None,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "lengths must be non-empty and strictly increasing, got {:?}",
                self.lengths
            )));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if !(self.readout_delay >= 0.0) {
            return Err(Error::Config(format!(
                "readout_delay must be non-negative, got {}",
                self.readout_delay
            )));
        }
        if !(self.cutoff > 0.0) || !(self.ideal_sample_rate > 0.0) {
            return Err(Error::Config(
                "cutoff and ideal_sample_rate must be positive".into(),
            ));
        }
        if !(self.readout.amplitude > 0.0 && self.readout.amplitude <= 1.0)
            || !(self.readout.duration > 0.0)
        {
            return Err(Error::Config(format!(
                "invalid readout pulse {:?}",
                self.readout
            )));
        }
        if let Asymptote::Fixed(b) = self.asymptote {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("fixed asymptote {b} outside [0, 1]")));
            }
        }
        self.distortion.validate()?;
        Ok(())
    }

    /// Background-twin carrier shift for gates of length `gate_length`.
    pub fn background_offset(&self, gate_length: f64) -> f64 {
        self.background_offset_hz.unwrap_or_else(|| {
            let cycles = (NOMINAL_BACKGROUND_OFFSET * gate_length - 0.5).round() + 0.5;
            cycles / gate_length
        })
    }

    /// Chain for this campaign on `device` and `dac`.
    pub fn chain(&self, device: &DeviceModel, dac: &DacConfig) -> ControlChain {
        let mut chain = ControlChain::new(*device, *dac, self.mode);
        chain.cutoff = self.cutoff;
        chain.ideal_sample_rate = self.ideal_sample_rate;
        chain.readout_delay = self.readout_delay;
        chain.readout = self.readout;
        chain.distortion = self.distortion;
        chain
    }
}

/// Fitted campaign outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    /// `None` for the depolarizing-injection campaign.
    pub mode: Option<RbMode>,
    pub master_seed: u64,
    pub lengths: Vec<usize>,
    pub n_seeds: usize,
    pub shots: u64,
    pub survival: Vec<f64>,
    pub survival_sem: Vec<f64>,
    /// Standard errors used as fit weights.
    pub fit_sigma: Vec<f64>,
    /// Mean |2⟩ population before readout.
    pub leakage: Vec<f64>,
    /// Per-length, per-seed survival estimates.
    pub per_seed: Vec<Vec<f64>>,
    pub fit: DecayFit,
    pub epc: f64,
    pub epc_sigma: f64,
    pub epg: f64,
    pub epg_sigma: f64,
    pub n_g: f64,
    /// Set when the fitted `p` sits on a bound of `(0, 1)`.
    pub flagged: bool,
}

impl RbResult {
    /// Per-length table: length, mean, SEM, fit weight, leakage, fitted model.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "length,survival_mean,survival_sem,fit_sigma,leakage_mean,fit_model"
        )?;
        for (k, &m) in self.lengths.iter().enumerate() {
            writeln!(
                out,
                "{m},{},{},{},{},{}",
                self.survival[k],
                self.survival_sem[k],
                self.fit_sigma[k],
                self.leakage[k],
                self.fit.model(m as f64)
            )?;
        }
        Ok(())
    }
}

/// Per-sequence survival estimates and |2⟩ population.
#[derive(Clone, Copy, Debug)]
struct UnitOutcome {
    survival: f64,
    leakage: f64,
}

fn unit_index(cfg: &RbConfig, length_index: usize, seed_index: usize) -> u64 {
    (length_index * cfg.n_seeds + seed_index) as u64
}

fn sequence_seed(master_seed: u64, index: u64) -> u64 {
    substream(master_seed, Stream::Sequence, index).random()
}

/// Fraction of `shots` Bernoulli(p) successes, or `p` itself in exact mode.
fn sample_fraction(p: f64, shots: u64, exact: bool, rng: &mut impl Rng) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if exact {
        return p;
    }
    let draw = Binomial::new(shots, p).expect("probability clamped to [0, 1]");
    draw.sample(rng) as f64 / shots as f64
}

/// Reduces per-unit outcomes (length-major) and fits the decay.
fn reduce(
    cfg: &RbConfig,
    mode: Option<RbMode>,
    master_seed: u64,
    units: &[UnitOutcome],
) -> Result<RbResult> {
    let n = cfg.n_seeds;
    let mut survival = Vec::new();
    let mut sem = Vec::new();
    let mut sigma = Vec::new();
    let mut leakage = Vec::new();
    let mut per_seed = Vec::new();
    for chunk in units.chunks(n) {
        let values: Vec<f64> = chunk.iter().map(|u| u.survival).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        let binomial = if cfg.exact_populations {
            0.0
        } else {
            (mean.clamp(0.0, 1.0) * (1.0 - mean.clamp(0.0, 1.0)) / (cfg.shots as f64 * n as f64))
                .sqrt()
        };
        survival.push(mean);
        sem.push(se);
        sigma.push(se.max(binomial).max(1e-6));
        leakage.push(chunk.iter().map(|u| u.leakage).sum::<f64>() / n as f64);
        per_seed.push(values);
    }
    let m: Vec<f64> = cfg.lengths.iter().map(|&m| m as f64).collect();
    let fit = fit_decay(&m, &survival, &sigma, cfg.asymptote).map_err(|source| Error::Fit {
        source,
        data: cfg
            .lengths
            .iter()
            .zip(&survival)
            .zip(&sigma)
            .map(|((&m, &s), &e)| (m, s, e))
            .collect(),
    })?;
    Ok(RbResult {
        mode,
        master_seed,
        lengths: cfg.lengths.clone(),
        n_seeds: cfg.n_seeds,
        shots: cfg.shots,
        survival,
        survival_sem: sem,
        fit_sigma: sigma,
        leakage,
        per_seed,
        epc: fit.epc(),
        epc_sigma: fit.epc_sigma(),
        epg: fit.epg(),
        epg_sigma: fit.epg_sigma(),
        n_g: PRIMITIVES_PER_CLIFFORD,
        flagged: fit.at_bound,
        fit,
    })
}

fn work_units(cfg: &RbConfig) -> Vec<(usize, usize)> {
    (0..cfg.lengths.len())
        .flat_map(|li| (0..cfg.n_seeds).map(move |si| (li, si)))
        .collect()
}

/// Raw full-DDS excited-state estimate from homodyne amplitude:
/// `(gain·(s0 + Δs·f) − s0) / Δs`.
fn raw_amplitude(gain: f64, fraction: f64, device: &DeviceModel) -> f64 {
    let l = device.readout_levels;
    gain * (l.s0 + (l.s1 - l.s0) * fraction)
}

/// Runs a full campaign through the configured signal chain.
pub fn run_rb(
    cfg: &RbConfig,
    device: &DeviceModel,
    calib: &CalibrationTable,
    dac: &DacConfig,
    master_seed: u64,
) -> Result<RbResult> {
    cfg.validate()?;
    device.validate()?;
    dac.validate()?;
    let chain = cfg.chain(device, dac);
    let units: Vec<UnitOutcome> = work_units(cfg)
        .into_par_iter()
        .map(|(li, si)| {
            let index = unit_index(cfg, li, si);
            let seq = generate_sequence(cfg.lengths[li], sequence_seed(master_seed, index));
            let schedule = compile_gates(&seq.primitives(), calib, device)?;
            let out = chain.simulate(&schedule)?;
            let mut rng = substream(master_seed, Stream::Shots, index);
            let survival = match out.readout_gain {
                None => sample_fraction(
                    report_zero_probability(&out.state, device),
                    cfg.shots,
                    cfg.exact_populations,
                    &mut rng,
                ),
                Some(gain) => {
                    let f = sample_fraction(
                        out.state.p_excited(),
                        cfg.shots,
                        cfg.exact_populations,
                        &mut rng,
                    );
                    let l = device.readout_levels;
                    1.0 - (raw_amplitude(gain, f, device) - l.s0) / (l.s1 - l.s0)
                }
            };
            Ok(UnitOutcome {
                survival,
                leakage: out.state.populations()[2],
            })
        })
        .collect::<Result<_>>()?;
    reduce(cfg, Some(cfg.mode), master_seed, &units)
}

/// Campaign in which every Clifford is its ideal unitary followed by a
/// depolarizing channel of strength `2ε`, measured through a symmetric
/// readout of the given fidelity. The expected EPC is `ε`.
pub fn run_depolarizing_rb(
    cfg: &RbConfig,
    epsilon: f64,
    readout_fidelity: f64,
    master_seed: u64,
) -> Result<RbResult> {
    cfg.validate()?;
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 0.5]")));
    }
    if !(0.5..=1.0).contains(&readout_fidelity) {
        return Err(Error::Config(format!(
            "readout fidelity {readout_fidelity} outside [0.5, 1]"
        )));
    }
    let lambda = 2.0 * epsilon;
    let mixed = C2::identity() * c(0.5, 0.0);
    let units: Vec<UnitOutcome> = work_units(cfg)
        .into_par_iter()
        .map(|(li, si)| {
            let index = unit_index(cfg, li, si);
            let seq = generate_sequence(cfg.lengths[li], sequence_seed(master_seed, index));
            let mut rho = C2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
            for g in seq.cliffords() {
                let u = g.unitary();
                rho = (u * rho * u.adjoint()) * c(1.0 - lambda, 0.0) + mixed * c(lambda, 0.0);
            }
            let p0 = rho[(0, 0)].re;
            let report0 = p0 * readout_fidelity + (1.0 - p0) * (1.0 - readout_fidelity);
            let mut rng = substream(master_seed, Stream::Shots, index);
            Ok(UnitOutcome {
                survival: sample_fraction(report0, cfg.shots, cfg.exact_populations, &mut rng),
                leakage: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    reduce(cfg, None, master_seed, &units)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RbConfig {
        RbConfig {
            lengths: vec![1, 10, 50, 150, 400],
            n_seeds: 8,
            ..RbConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(RbConfig::default().validate().is_ok());
        for bad in [
            RbConfig {
                lengths: vec![4, 2],
                ..RbConfig::default()
            },
            RbConfig {
                lengths: vec![2, 2, 4],
                ..RbConfig::default()
            },
            RbConfig {
                n_seeds: 0,
                ..RbConfig::default()
            },
            RbConfig {
                shots: 0,
                ..RbConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let cfg: RbConfig = serde_json::from_str(r#"{"mode": "ideal"}"#).unwrap();
        assert_eq!(cfg.mode, RbMode::Ideal);
        assert_eq!(cfg.lengths, default_lengths());
        assert_eq!(cfg.n_seeds, 20);
        assert_eq!(cfg.shots, 1000);
        assert_eq!(cfg.readout_delay, 120e-9);
        assert!(serde_json::from_str::<RbConfig>(r#"{"seeds": 3}"#).is_err());
        let fixed: RbConfig = serde_json::from_str(r#"{"asymptote": {"fixed": 0.4}}"#).unwrap();
        assert_eq!(fixed.background_offset_hz, None);
        assert_eq!(fixed.asymptote, Asymptote::Fixed(0.4));
    }

    #[test]
    fn background_offset_avoids_gate_comb() {
        let cfg = RbConfig::default();
        let f = cfg.background_offset(29e-9);
        assert!((f - 58.5 / 29e-9).abs() < 1e-3);
        assert!((f - 2e9).abs() < 0.5 / 29e-9);
        let explicit = RbConfig {
            background_offset_hz: Some(2e9),
            ..RbConfig::default()
        };
        assert_eq!(explicit.background_offset(29e-9), 2e9);
    }

    #[test]
    fn depolarizing_recovers_epsilon_exactly() {
        let cfg = RbConfig {
            exact_populations: true,
            ..small_cfg()
        };
        let r = run_depolarizing_rb(&cfg, 2e-3, 0.93, 1).unwrap();
        assert!((r.epc - 2e-3).abs() < 1e-9, "{}", r.epc);
        assert!((r.fit.a - 0.43 * (1.0 - 4e-3)).abs() < 1e-6);
    }

    #[test]
    fn depolarizing_is_reproducible() {
        let cfg = small_cfg();
        let a = run_depolarizing_rb(&cfg, 5e-3, 0.93, 42).unwrap();
        let b = run_depolarizing_rb(&cfg, 5e-3, 0.93, 42).unwrap();
        assert_eq!(a, b);
        let c = run_depolarizing_rb(&cfg, 5e-3, 0.93, 43).unwrap();
        assert_ne!(a.survival, c.survival);
        assert!(
            (a.epc - 5e-3).abs() < 3.0 * a.epc_sigma + 2e-4,
            "{} ± {}",
            a.epc,
            a.epc_sigma
        );
    }

    #[test]
    fn ideal_mode_has_no_decay() {
        let cfg = RbConfig {
            lengths: vec![1, 4, 16],
            n_seeds: 2,
            mode: RbMode::Ideal,
            exact_populations: true,
            ..RbConfig::default()
        };
        let device = DeviceModel::default().with_levels(2);
        let a = crate::device::REFERENCE_PI_AMPLITUDE;
        let mut calib = CalibrationTable::default().with_amplitudes(a, a / 2.0);
        calib.beta = 0.0;
        let r = run_rb(&cfg, &device, &calib, &DacConfig::default(), 3).unwrap();
        assert!(
            r.survival.iter().all(|&s| (s - 0.93).abs() < 1e-4),
            "{:?}",
            r.survival
        );
    }

    #[test]
    fn untuned_calibration_is_rejected() {
        let cfg = RbConfig {
            lengths: vec![1, 2, 3],
            n_seeds: 1,
            ..RbConfig::default()
        };
        let err = run_rb(
            &cfg,
            &DeviceModel::default(),
            &CalibrationTable::default(),
            &DacConfig::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pulse(_)), "{err}");
    }

    #[test]
    fn csv_has_one_row_per_length() {
        let cfg = RbConfig {
            exact_populations: true,
            ..small_cfg()
        };
        let r = run_depolarizing_rb(&cfg, 1e-3, 0.93, 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + cfg.lengths.len());
        assert!(text.starts_with("length,survival_mean"));
    }
}
