//! Subcommand implementations. Each returns the files to write; nothing
//! touches the output directory until the whole computation succeeded.

use std::f64::consts::PI;
use std::io::BufReader;
use std::path::Path;

use ddsq::dds::{encode_raw, synthesize, synthesize_segments, DistortionModel};
use ddsq::device::DeviceModel;
use ddsq::noise::{
    extrapolate_low, infidelity_curves, load_spectrum, to_dephasing_psd, write_infidelity_csv,
    write_psd_csv, write_spectrum_csv, PhaseNoiseSpectrum, PowerLawModel,
};
use ddsq::pulse::{CalibrationTable, PulseShape};
use ddsq::rb::{
    background_subtract_run, compile_gates, run_rb, sweep, tune_up, write_sweep_csv, RbMode,
    RbResult, SweepRow, TuneUpOptions, TuneUpReport,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, ScheduleFile};
use crate::output::Outputs;
use crate::CliError;

/// Tunes against the chain the campaign will use: analytic envelopes for
/// ideal campaigns, the synthesized qubit tone otherwise.
fn tuned(
    cfg: &ExperimentConfig,
    device: &DeviceModel,
    start: &CalibrationTable,
) -> Result<(CalibrationTable, Option<TuneUpReport>), CliError> {
    if cfg.tune_first {
        let options = TuneUpOptions {
            mode: match cfg.rb.mode {
                RbMode::Ideal => RbMode::Ideal,
                RbMode::Hybrid | RbMode::FullDds => RbMode::Hybrid,
            },
            ..cfg.tune.clone()
        };
        let report = tune_up(device, &cfg.dac, start, &options)?;
        Ok((report.calibration, Some(report)))
    } else {
        Ok((*start, None))
    }
}

#[derive(Serialize)]
struct RbOutput<'a> {
    calibration: &'a CalibrationTable,
    result: &'a RbResult,
}

pub fn rb(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let (calib, report) = tuned(cfg, &cfg.device, &cfg.calibration)?;
    let result = run_rb(&cfg.rb, &cfg.device, &calib, &cfg.dac, cfg.seed)?;
    let mut out = Outputs::default();
    out.add_json(
        "rb_result.json",
        &RbOutput {
            calibration: &calib,
            result: &result,
        },
    );
    out.add_with("rb_survival.csv", |w| result.write_csv(w))?;
    if let Some(r) = report {
        out.add_json("tuneup.json", &r);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    parameter: String,
    rows: &'a [SweepRow],
}

pub fn sweep_cmd(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let rows = sweep(
        cfg.sweep.parameter,
        &cfg.sweep.values,
        &cfg.rb,
        &cfg.device,
        &cfg.dac,
        &cfg.calibration,
        &cfg.tune,
        cfg.seed,
    )?;
    let mut out = Outputs::default();
    out.add_with("sweep.csv", |w| write_sweep_csv(&rows, w))?;
    out.add_json(
        "sweep.json",
        &SweepOutput {
            parameter: cfg.sweep.parameter.to_string(),
            rows: &rows,
        },
    );
    Ok(out)
}

pub fn tuneup(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let report = tune_up(&cfg.device, &cfg.dac, &cfg.calibration, &cfg.tune)?;
    let mut out = Outputs::default();
    out.add_json("tuneup.json", &report);
    out.add_json("calibration.json", &report.calibration);
    Ok(out)
}

#[derive(Serialize)]
struct DistortionSummary {
    a_pi: Option<f64>,
    raw_b: f64,
    raw_epg: f64,
    raw_epg_sigma: f64,
    corrected_b: f64,
    corrected_epg: f64,
    corrected_epg_sigma: f64,
    reference_epg: Option<f64>,
    reference_epg_sigma: Option<f64>,
    background_excitation_max: f64,
}

#[derive(Serialize)]
struct DistortionOutput<'a> {
    summary: DistortionSummary,
    calibration: &'a CalibrationTable,
    raw: &'a RbResult,
    corrected: &'a RbResult,
    reference: Option<&'a RbResult>,
}

pub fn distortion(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let study = &cfg.distortion_study;
    let mut device = cfg.device;
    let mut start = cfg.calibration;
    if let Some(fraction) = study.full_scale_fraction {
        let unit = PulseShape::new(
            start.sigma_s,
            start.truncation,
            1.0,
            0.0,
            0.0,
            start.buffer_s,
        )
        .map_err(ddsq::Error::from)?;
        device.rabi_per_fullscale = PI / (fraction * unit.unit_area());
        start = start.with_amplitudes(fraction, fraction / 2.0);
    }
    let (calib, _) = tuned(cfg, &device, &start)?;
    let mut rb = cfg.rb.clone();
    rb.lengths = study.lengths.clone();
    rb.n_seeds = study.n_seeds;
    rb.asymptote = study.asymptote;
    rb.mode = RbMode::FullDds;
    let run = background_subtract_run(&rb, &device, &calib, &cfg.dac, cfg.seed)?;
    let reference = if study.reference_run {
        let clean = ddsq::rb::RbConfig {
            distortion: DistortionModel::disabled(),
            ..rb.clone()
        };
        Some(run_rb(&clean, &device, &calib, &cfg.dac, cfg.seed)?)
    } else {
        None
    };
    let summary = DistortionSummary {
        a_pi: calib.a_pi,
        raw_b: run.raw.fit.b,
        raw_epg: run.raw.epg,
        raw_epg_sigma: run.raw.epg_sigma,
        corrected_b: run.corrected.fit.b,
        corrected_epg: run.corrected.epg,
        corrected_epg_sigma: run.corrected.epg_sigma,
        reference_epg: reference.as_ref().map(|r| r.epg),
        reference_epg_sigma: reference.as_ref().map(|r| r.epg_sigma),
        background_excitation_max: run.background_excitation_max,
    };
    let mut out = Outputs::default();
    out.add_json(
        "distortion.json",
        &DistortionOutput {
            summary,
            calibration: &calib,
            raw: &run.raw,
            corrected: &run.corrected,
            reference: reference.as_ref(),
        },
    );
    out.add_with("distortion_raw.csv", |w| run.raw.write_csv(w))?;
    out.add_with("distortion_corrected.csv", |w| run.corrected.write_csv(w))?;
    if let Some(r) = &reference {
        out.add_with("distortion_reference.csv", |w| r.write_csv(w))?;
    }
    Ok(out)
}

/// File-name-safe form of a source label.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn noise(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let settings = &cfg.noise;
    let band = &settings.band;
    let mut spectra: Vec<PhaseNoiseSpectrum> = Vec::new();
    for file in &settings.spectra {
        let f = std::fs::File::open(&file.path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", file.path.display())))?;
        let s = load_spectrum(BufReader::new(f), file.label.clone()).map_err(|e| {
            CliError::Module(ddsq::Error::Config(format!("{}: {e}", file.path.display())))
        })?;
        let lowest = s.points.first().map_or(f64::INFINITY, |p| p.0);
        let s = if lowest > settings.extrapolate_to_hz {
            extrapolate_low(&s, settings.extrapolate_to_hz, settings.points_per_decade)
                .map_err(ddsq::Error::from)?
        } else {
            s
        };
        spectra.push(s);
    }
    if settings.synthetic {
        for model in [PowerLawModel::dds_like(), PowerLawModel::generator_like()] {
            spectra.push(
                model
                    .spectrum(band.f_min_hz, band.f_max_hz, settings.points_per_decade)
                    .map_err(ddsq::Error::from)?,
            );
        }
    }
    if spectra.is_empty() {
        return Err(CliError::Config(
            "noise needs at least one spectrum (noise.spectra or noise.synthetic)".into(),
        ));
    }
    let psds = spectra
        .iter()
        .map(to_dephasing_psd)
        .collect::<Result<Vec<_>, _>>()
        .map_err(ddsq::Error::from)?;
    let rows = infidelity_curves(&psds, &settings.gate_lengths, band).map_err(ddsq::Error::from)?;
    let labels: Vec<String> = spectra.iter().map(|s| s.label.clone()).collect();
    let mut out = Outputs::default();
    for (s, psd) in spectra.iter().zip(&psds) {
        let name = slug(&s.label);
        out.add_with(format!("phase_noise_{name}.csv"), |w| {
            write_spectrum_csv(s, w)
        })?;
        out.add_with(format!("dephasing_psd_{name}.csv"), |w| {
            write_psd_csv(psd, w)
        })?;
    }
    out.add_with("infidelity.csv", |w| {
        write_infidelity_csv(&labels, &rows, w)
    })?;
    Ok(out)
}

pub fn synth(cfg: &ExperimentConfig, schedule_path: &Path) -> Result<Outputs, CliError> {
    let text = std::fs::read_to_string(schedule_path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", schedule_path.display())))?;
    let schedule: ScheduleFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", schedule_path.display())))?;
    let mut tones = schedule.tones.clone();
    if let Some(gates) = &schedule.gates {
        let calib = if cfg.calibration.a_pi.is_none() && cfg.tune_first {
            tuned(cfg, &cfg.device, &cfg.calibration)?.0
        } else {
            cfg.calibration
        };
        let mut tone = compile_gates(&gates.gates, &calib, &cfg.device)?.tone;
        if let Some(f) = gates.carrier_hz {
            tone.carrier_frequency = f;
        }
        tones.push(tone);
    }
    if tones.is_empty() {
        return Err(CliError::Config(
            "schedule has no tones and no gates".into(),
        ));
    }
    let span = schedule
        .t_span
        .unwrap_or((0.0, tones.iter().map(|t| t.end_time()).fold(0.0, f64::max)));
    let w = if schedule.segments.is_empty() {
        synthesize(&tones, &cfg.dac, span)
    } else {
        let mut bounds = vec![span.0];
        bounds.extend(schedule.segments.iter().copied());
        bounds.push(span.1);
        synthesize_segments(&tones, &cfg.dac, &bounds, schedule.phase_mode)
    }
    .map_err(ddsq::Error::from)?;
    let mut out = Outputs::default();
    out.add("waveform.raw", encode_raw(&w));
    out.add_json("waveform.raw.json", &w.sidecar());
    out.add_with("waveform.csv", |b| w.write_csv(b))?;
    Ok(out)
}
