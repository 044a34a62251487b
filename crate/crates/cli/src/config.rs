//! Experiment configuration: one JSON document merged from a file and
//! `--set key=value` overrides, then validated by the owning modules.

use std::path::{Path, PathBuf};

use ddsq::dds::{DacConfig, PhaseMode, ToneSpec};
use ddsq::device::DeviceModel;
use ddsq::noise::Band;
use ddsq::pulse::{CalibrationTable, PrimitiveGate};
use ddsq::rb::{Asymptote, RbConfig, SweepParameter, TuneUpOptions};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DDSQ_OUTPUT_DIR";

fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub device: DeviceModel,
    #[serde(default)]
    pub dac: DacConfig,
    #[serde(default)]
    pub rb: RbConfig,
    #[serde(default)]
    pub calibration: CalibrationTable,
    #[serde(default)]
    pub tune: TuneUpOptions,
    /// Run tune-up before `rb` and `distortion`, on the chain selected by
    /// `rb.mode`; otherwise `calibration` must already carry amplitudes.
    #[serde(default = "default_true")]
    pub tune_first: bool,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub distortion_study: DistortionStudy,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.device.validate().map_err(ddsq::Error::from)?;
        self.dac.validate().map_err(ddsq::Error::from)?;
        self.rb.validate()?;
        if self.sweep.values.is_empty() {
            return Err(CliError::Config("sweep.values must not be empty".into()));
        }
        if let Some(f) = self.distortion_study.full_scale_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CliError::Config(format!(
                    "distortion_study.full_scale_fraction {f} outside (0, 1]"
                )));
            }
        }
        if self.noise.gate_lengths.iter().any(|&t| t.is_nan() || t <= 0.0) {
            return Err(CliError::Config(
                "noise.gate_lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical JSON without the output directory, used for hashing.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_vec(&c).expect("config serializes")
    }
}

fn default_sweep_values() -> Vec<f64> {
    (2..=8).map(|k| k as f64 * 10e-9).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    #[serde(default = "default_sweep_parameter")]
    pub parameter: SweepParameter,
    #[serde(default = "default_sweep_values")]
    pub values: Vec<f64>,
}

fn default_sweep_parameter() -> SweepParameter {
    SweepParameter::GateLength
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            parameter: default_sweep_parameter(),
            values: default_sweep_values(),
        }
    }
}

fn default_study_lengths() -> Vec<usize> {
    vec![2, 100, 300, 600, 1000, 1500, 2000, 3000, 4000]
}
fn default_study_seeds() -> usize {
    10
}
fn default_study_fraction() -> Option<f64> {
    Some(0.8)
}
fn default_study_asymptote() -> Asymptote {
    Asymptote::Free
}

/// Campaign shape for the `distortion` command. The remaining settings
/// (shots, readout, droop model) come from `rb`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionStudy {
    #[serde(default = "default_study_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_study_seeds")]
    pub n_seeds: usize,
    #[serde(default = "default_study_asymptote")]
    pub asymptote: Asymptote,
    /// Scales the drive coupling so the π amplitude lands at this fraction
    /// of full scale; `null` keeps the device as configured.
    #[serde(default = "default_study_fraction")]
    pub full_scale_fraction: Option<f64>,
    /// Also run the campaign without droop for comparison.
    #[serde(default = "default_true")]
    pub reference_run: bool,
}

impl Default for DistortionStudy {
    fn default() -> Self {
        Self {
            lengths: default_study_lengths(),
            n_seeds: default_study_seeds(),
            asymptote: default_study_asymptote(),
            full_scale_fraction: default_study_fraction(),
            reference_run: true,
        }
    }
}

/// A measured phase-noise spectrum on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub path: PathBuf,
    pub label: String,
}

fn default_extrapolate_to() -> f64 {
    1.0
}
fn default_per_decade() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    #[serde(default)]
    pub spectra: Vec<SpectrumFile>,
    /// Include the two built-in power-law sources.
    #[serde(default = "default_true")]
    pub synthetic: bool,
    /// Measured spectra are extended down to this frequency (Hz) at their
    /// lowest-decade slope.
    #[serde(default = "default_extrapolate_to")]
    pub extrapolate_to_hz: f64,
    #[serde(default = "default_per_decade")]
    pub points_per_decade: usize,
    #[serde(default)]
    pub band: Band,
    #[serde(default = "ddsq::noise::default_gate_lengths")]
    pub gate_lengths: Vec<f64>,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            spectra: Vec::new(),
            synthetic: true,
            extrapolate_to_hz: default_extrapolate_to(),
            points_per_decade: default_per_decade(),
            band: Band::default(),
            gate_lengths: ddsq::noise::default_gate_lengths(),
        }
    }
}

fn default_phase_mode() -> PhaseMode {
    PhaseMode::Continuous
}

/// Gate list compiled with the configured calibration onto one carrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSchedule {
    pub gates: Vec<PrimitiveGate>,
    /// Defaults to the device qubit frequency.
    #[serde(default)]
    pub carrier_hz: Option<f64>,
}

/// Input of the `synth` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(default)]
    pub tones: Vec<ToneSpec>,
    #[serde(default)]
    pub gates: Option<GateSchedule>,
    /// Defaults to `[0, end of the last pulse]`.
    #[serde(default)]
    pub t_span: Option<(f64, f64)>,
    /// Interior segment boundaries (s); synthesized piecewise when present.
    #[serde(default)]
    pub segments: Vec<f64>,
    #[serde(default = "default_phase_mode")]
    pub phase_mode: PhaseMode,
}

/// Sets `path` (dot separated) in `root` to `value`, creating objects on
/// the way. The value is parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!(
            "override {assignment:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            return Err(CliError::Config(format!(
                "override {key:?}: {part:?} is inside a non-object value"
            )));
        }
        let map = node.as_object_mut().expect("checked object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Reads `path` (or `{}`), applies `overrides` in order and deserializes.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(root).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, then the config, then the environment, then `./ddsq-out`.
pub fn output_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ddsq-out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse_json() {
        let mut v = serde_json::json!({"rb": {"n_seeds": 3}});
        apply_override(&mut v, "rb.n_seeds=7").unwrap();
        apply_override(&mut v, "dac.bits=14").unwrap();
        apply_override(&mut v, "rb.mode=ideal").unwrap();
        apply_override(&mut v, "rb.lengths=[1,2,3]").unwrap();
        assert_eq!(v["rb"]["n_seeds"], 7);
        assert_eq!(v["dac"]["bits"], 14);
        assert_eq!(v["rb"]["mode"], "ideal");
        assert_eq!(v["rb"]["lengths"], serde_json::json!([1, 2, 3]));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "rb..x=1").is_err());
        assert!(apply_override(&mut v, "rb.n_seeds.x=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, &["rb.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(load(None, &["frobnicate=1".into()]).is_err());
    }

    #[test]
    fn invalid_physics_is_rejected() {
        assert!(load(None, &["dac.bits=1".into()]).is_err());
        assert!(load(None, &["rb.n_seeds=0".into()]).is_err());
        assert!(load(None, &["distortion_study.full_scale_fraction=2".into()]).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg.seed, 1);
        assert!(cfg.tune_first);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.canonical_json(), back.canonical_json());
    }
}
