//! Full-DDS campaign with background-twin droop correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{compile_gates, RbMode};
use super::{
    reduce, sample_fraction, sequence_seed, unit_index, work_units, RbConfig, RbResult, UnitOutcome,
};
use crate::clifford::generate_sequence;
use crate::dds::DacConfig;
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::pulse::CalibrationTable;
use crate::rng::{substream, Stream};

/// Offset separating background-shot draws from the main shot stream.
const BACKGROUND_STREAM: u64 = 1 << 40;

/// Raw and background-corrected results of one full-DDS campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundRun {
    pub raw: RbResult,
    pub corrected: RbResult,
    /// Largest excited population reached by any background twin.
    pub background_excitation_max: f64,
}

/// Runs each sequence twice: as measured, and with the qubit tone shifted by
/// [`RbConfig::background_offset`]. The twin's readout amplitude calibrates the
/// droop of the measured readout.
pub fn background_subtract_run(
    cfg: &RbConfig,
    device: &DeviceModel,
    calib: &CalibrationTable,
    dac: &DacConfig,
    master_seed: u64,
) -> Result<BackgroundRun> {
    cfg.validate()?;
    device.validate()?;
    dac.validate()?;
    if cfg.mode != RbMode::FullDds {
        return Err(Error::Config(format!(
            "background subtraction needs full_dds mode, got {:?}",
            cfg.mode
        )));
    }
    let chain = cfg.chain(device, dac);
    let levels = device.readout_levels;
    let span = levels.s1 - levels.s0;
    let offset = cfg.background_offset(calib.gate_length());
    let units: Vec<(UnitOutcome, UnitOutcome, f64)> = work_units(cfg)
        .into_par_iter()
        .map(|(li, si)| {
            let index = unit_index(cfg, li, si);
            let seq = generate_sequence(cfg.lengths[li], sequence_seed(master_seed, index));
            let schedule = compile_gates(&seq.primitives(), calib, device)?;
            let mut twin = schedule.clone();
            twin.tone.carrier_frequency += offset;

            let main = chain.simulate(&schedule)?;
            let back = chain.simulate(&twin)?;
            let mut rng = substream(master_seed, Stream::Shots, index);
            let mut bg_rng = substream(master_seed, Stream::Shots, index | BACKGROUND_STREAM);
            let f = sample_fraction(
                main.state.p_excited(),
                cfg.shots,
                cfg.exact_populations,
                &mut rng,
            );
            let f_bg = sample_fraction(
                back.state.p_excited(),
                cfg.shots,
                cfg.exact_populations,
                &mut bg_rng,
            );
            let gain = main.readout_gain.expect("full_dds outcome has a gain");
            let gain_bg = back.readout_gain.expect("full_dds outcome has a gain");
            let a_meas = gain * (levels.s0 + span * f);
            let a_bg = gain_bg * (levels.s0 + span * f_bg);
            if !(a_bg > 0.0) {
                return Err(Error::Correction(format!(
                    "background amplitude {a_bg} is not positive (length {}, seed {si})",
                    cfg.lengths[li]
                )));
            }
            let raw_p1 = (a_meas - levels.s0) / span;
            let corrected_p1 = ((a_meas / a_bg * levels.s0 - levels.s0) / span).clamp(0.0, 1.0);
            let leakage = main.state.populations()[2];
            Ok((
                UnitOutcome {
                    survival: 1.0 - raw_p1,
                    leakage,
                },
                UnitOutcome {
                    survival: 1.0 - corrected_p1,
                    leakage,
                },
                back.state.p_excited(),
            ))
        })
        .collect::<Result<_>>()?;
    let raw: Vec<UnitOutcome> = units.iter().map(|u| u.0).collect();
    let corrected: Vec<UnitOutcome> = units.iter().map(|u| u.1).collect();
    let background_excitation_max = units.iter().map(|u| u.2).fold(0.0, f64::max);
    Ok(BackgroundRun {
        raw: reduce(cfg, Some(RbMode::FullDds), master_seed, &raw)?,
        corrected: reduce(cfg, Some(RbMode::FullDds), master_seed, &corrected)?,
        background_excitation_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dds::DistortionModel;
    use crate::rb::Asymptote;

    fn calib() -> CalibrationTable {
        let a = crate::device::REFERENCE_PI_AMPLITUDE;
        CalibrationTable::default().with_amplitudes(a, a / 2.0)
    }

    fn cfg(distortion: DistortionModel) -> RbConfig {
        RbConfig {
            lengths: vec![1, 4, 10, 20],
            n_seeds: 2,
            mode: RbMode::FullDds,
            exact_populations: true,
            asymptote: Asymptote::Fixed(0.5),
            distortion,
            readout: crate::rb::ReadoutPulse {
                amplitude: 0.5,
                duration: 200e-9,
            },
            ..RbConfig::default()
        }
    }

    #[test]
    fn rejects_other_modes() {
        let c = RbConfig {
            mode: RbMode::Hybrid,
            ..cfg(DistortionModel::default())
        };
        let err = background_subtract_run(
            &c,
            &DeviceModel::default(),
            &calib(),
            &DacConfig::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn without_distortion_raw_equals_corrected() {
        let device = DeviceModel::default().coherent().with_levels(2);
        let run = background_subtract_run(
            &cfg(DistortionModel::disabled()),
            &device,
            &calib(),
            &DacConfig::default(),
            1,
        )
        .unwrap();
        for (a, b) in run.raw.survival.iter().zip(&run.corrected.survival) {
            assert!((a - b).abs() < 5e-3, "{a} {b}");
        }
        assert!(
            run.background_excitation_max < 5e-3,
            "{}",
            run.background_excitation_max
        );
    }

    #[test]
    fn droop_biases_raw_but_not_corrected() {
        let device = DeviceModel::default().coherent().with_levels(2);
        let fast = DistortionModel {
            tau: 100e-9,
            ..DistortionModel::default()
        };
        let run = background_subtract_run(&cfg(fast), &device, &calib(), &DacConfig::default(), 2)
            .unwrap();
        let raw = run.raw.survival[3];
        let corrected = run.corrected.survival[3];
        // Droop lowers the measured amplitude, which reads as extra ground population.
        assert!(raw > corrected + 5e-3, "raw {raw} corrected {corrected}");
        assert!(corrected > 0.99, "{corrected}");
    }
}
