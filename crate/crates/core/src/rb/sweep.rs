//! EPG versus gate length, DAC full-scale fraction and sample rate.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::tuneup::{tune_up, TuneUpOptions};
use super::{run_rb, RbConfig};
use crate::dds::DacConfig;
use crate::device::{coherence_limit_epg, DeviceModel};
use crate::error::{Error, Result};
use crate::pulse::{CalibrationTable, PulseShape};

/// Swept quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Primitive gate length including the buffer (s); re-tuned per value.
    GateLength,
    /// Tuned `a_π` as a fraction of full scale; the drive coupling is scaled
    /// to reach it and the pulses are re-tuned per value.
    FullScaleFraction,
    /// DAC sample rate (Hz); the calibration is tuned once and reused.
    SampleRate,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::GateLength => "gate_length",
            SweepParameter::FullScaleFraction => "full_scale_fraction",
            SweepParameter::SampleRate => "sample_rate",
        })
    }
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub epg: f64,
    pub epg_sigma: f64,
    pub epc: f64,
    pub a_pi: f64,
    pub beta: f64,
    /// Mean |2⟩ population at the longest sequence length.
    pub leakage: f64,
    pub flagged: bool,
    /// Idle-channel EPG for the gate length (gate-length sweeps only).
    pub coherence_limit: Option<f64>,
}

/// Writes rows as CSV; the coherence-limit column is empty when absent.
pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "value,epg,epg_sigma,epc,a_pi,beta,leakage,flagged,coherence_limit"
    )?;
    for r in rows {
        let limit = r.coherence_limit.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.value, r.epg, r.epg_sigma, r.epc, r.a_pi, r.beta, r.leakage, r.flagged, limit
        )?;
    }
    Ok(())
}

/// Runs tune-up and RB at every value of `parameter`. `calib` supplies the
/// pulse shape defaults (σ, truncation, buffer, β) and, for sample-rate
/// sweeps, the starting point of the single tune-up.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    parameter: SweepParameter,
    values: &[f64],
    cfg: &RbConfig,
    device: &DeviceModel,
    dac: &DacConfig,
    calib: &CalibrationTable,
    tune: &TuneUpOptions,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let shared = match parameter {
        SweepParameter::SampleRate => Some(tune_up(device, dac, calib, tune)?.calibration),
        _ => None,
    };
    values
        .iter()
        .map(|&value| {
            point(
                parameter,
                value,
                cfg,
                device,
                dac,
                calib,
                tune,
                shared,
                master_seed,
            )
            .map_err(|e| Error::Sweep {
                parameter: parameter.to_string(),
                value,
                source: Box::new(e),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn point(
    parameter: SweepParameter,
    value: f64,
    cfg: &RbConfig,
    device: &DeviceModel,
    dac: &DacConfig,
    template: &CalibrationTable,
    tune: &TuneUpOptions,
    shared: Option<CalibrationTable>,
    master_seed: u64,
) -> Result<SweepRow> {
    let mut device = *device;
    let mut dac = *dac;
    let mut coherence_limit = None;
    let calib = match parameter {
        SweepParameter::GateLength => {
            let mut c = CalibrationTable::for_gate_length(value, template.buffer_s)?;
            c.beta = template.beta;
            coherence_limit = Some(coherence_limit_epg(value, &device));
            tune_up(&device, &dac, &c, tune)?.calibration
        }
        SweepParameter::FullScaleFraction => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::Config(format!(
                    "full-scale fraction {value} outside (0, 1]"
                )));
            }
            let unit = PulseShape::new(
                template.sigma_s,
                template.truncation,
                1.0,
                0.0,
                0.0,
                template.buffer_s,
            )?;
            device.rabi_per_fullscale = std::f64::consts::PI / (value * unit.unit_area());
            let c = CalibrationTable {
                a_pi: Some(value),
                a_pi_2: Some(0.5 * value),
                stark_rad_s: 0.0,
                ..*template
            };
            tune_up(&device, &dac, &c, tune)?.calibration
        }
        SweepParameter::SampleRate => {
            dac.sample_rate = value;
            dac.validate()?;
            shared.expect("tuned before the sweep")
        }
    };
    let result = run_rb(cfg, &device, &calib, &dac, master_seed)?;
    Ok(SweepRow {
        value,
        epg: result.epg,
        epg_sigma: result.epg_sigma,
        epc: result.epc,
        a_pi: calib.a_pi.unwrap_or_default(),
        beta: calib.beta,
        leakage: result.leakage.last().copied().unwrap_or_default(),
        flagged: result.flagged,
        coherence_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rb::RbMode;

    fn quick_cfg() -> RbConfig {
        RbConfig {
            lengths: vec![1, 5, 20],
            n_seeds: 2,
            mode: RbMode::Ideal,
            exact_populations: true,
            ..RbConfig::default()
        }
    }

    fn quick_tune() -> TuneUpOptions {
        TuneUpOptions {
            mode: RbMode::Ideal,
            ..TuneUpOptions::default()
        }
    }

    #[test]
    fn gate_length_rows_carry_coherence_limit() {
        let device = DeviceModel::default().with_levels(2);
        let rows = sweep(
            SweepParameter::GateLength,
            &[29e-9, 45e-9],
            &quick_cfg(),
            &device,
            &DacConfig::default(),
            &CalibrationTable::default(),
            &quick_tune(),
            5,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        let l0 = rows[0].coherence_limit.unwrap();
        let l1 = rows[1].coherence_limit.unwrap();
        assert!((l0 - coherence_limit_epg(29e-9, &device)).abs() < 1e-15);
        assert!(l1 > l0);
        assert!(rows[1].a_pi < rows[0].a_pi);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn full_scale_fraction_sets_tuned_amplitude() {
        let device = DeviceModel::default().with_levels(2);
        let rows = sweep(
            SweepParameter::FullScaleFraction,
            &[0.3],
            &quick_cfg(),
            &device,
            &DacConfig::default(),
            &CalibrationTable::default(),
            &quick_tune(),
            5,
        )
        .unwrap();
        assert!((rows[0].a_pi - 0.3).abs() < 1e-3, "{}", rows[0].a_pi);
        assert!(rows[0].coherence_limit.is_none());
    }

    #[test]
    fn failing_value_is_attached() {
        let err = sweep(
            SweepParameter::GateLength,
            &[29e-9, 3e-9],
            &quick_cfg(),
            &DeviceModel::default().with_levels(2),
            &DacConfig::default(),
            &CalibrationTable::default(),
            &quick_tune(),
            5,
        )
        .unwrap_err();
        match err {
            Error::Sweep {
                parameter, value, ..
            } => {
                assert_eq!(parameter, "gate_length");
                assert_eq!(value, 3e-9);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
