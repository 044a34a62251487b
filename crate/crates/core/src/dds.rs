//! Software model of the DDS arbitrary waveform generator.
//!
//! Carriers are evaluated from the global sample index, so a waveform cut
//! into abutting segments is bit-identical to the same schedule synthesized
//! in one pass. A tone contributes `Re[z(t) · e^{iθ}]` where `z` is the
//! complex baseband of its pulses and `θ = 2π f_c n / f_s + φ₀`.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::DdsError;
use crate::pulse::{PreparedPulse, PulseShape};

/// Sample rates the instrument supports natively (S/s). Rates between
/// 57.76 and 65 GS/s are also native.
pub const STANDARD_SAMPLE_RATES: [f64; 3] = [14.44e9, 28.88e9, 57.76e9];
pub const MAX_NATIVE_RATE: f64 = 65e9;
/// DRAG reference anharmonicity (rad/s).
pub const DEFAULT_DRAG_REFERENCE: f64 = 2.0 * PI * 375e6;

fn default_sample_rate() -> f64 {
    64e9
}
fn default_bits() -> u32 {
    8
}
fn default_full_scale() -> f64 {
    1.0
}

/// DAC sample rate, resolution and full-scale output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DacConfig {
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_bits")]
    pub bits: u32,
    /// Output amplitude at code `2^(bits-1)`, in arbitrary physical units.
    #[serde(default = "default_full_scale")]
    pub full_scale: f64,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self {
            sample_rate: default_sample_rate(),
            bits: default_bits(),
            full_scale: 1.0,
        }
    }
}

impl DacConfig {
    pub fn new(sample_rate: f64, bits: u32) -> Result<Self, DdsError> {
        let dac = Self {
            sample_rate,
            bits,
            full_scale: 1.0,
        };
        dac.validate()?;
        Ok(dac)
    }

    pub fn validate(&self) -> Result<(), DdsError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(DdsError::InvalidDac(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(2..=16).contains(&self.bits) {
            return Err(DdsError::InvalidDac(format!(
                "bits must be in 2..=16, got {}",
                self.bits
            )));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(DdsError::InvalidDac(format!(
                "full scale must be positive, got {}",
                self.full_scale
            )));
        }
        Ok(())
    }

    /// False when the rate is outside the instrument's native set; such
    /// rates are simulated but flagged.
    pub fn is_standard_rate(&self) -> bool {
        let close = |r: f64| (self.sample_rate - r).abs() <= 1e-9 * r;
        STANDARD_SAMPLE_RATES.iter().any(|&r| close(r))
            || (STANDARD_SAMPLE_RATES[2]..=MAX_NATIVE_RATE).contains(&self.sample_rate)
            || close(MAX_NATIVE_RATE)
    }

    /// Codes per unit full scale, `2^(bits-1)`.
    pub fn scale(&self) -> f64 {
        f64::from(1u32 << (self.bits - 1))
    }

    pub fn code_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.bits - 1);
        (-half, half - 1)
    }

    /// Round half away from zero, then clamp to the code range.
    pub fn quantize(&self, ideal: f64) -> i32 {
        let (lo, hi) = self.code_range();
        ((ideal * self.scale()).round() as i64).clamp(i64::from(lo), i64::from(hi)) as i32
    }

    pub fn effective_bits(&self, full_scale_fraction: f64) -> Result<f64, DdsError> {
        effective_bits_for(full_scale_fraction, self.bits)
    }
}

/// Number of bits spanned by a bipolar signal with peak `fraction` of full
/// scale on an 8-bit DAC.
pub fn effective_bits(full_scale_fraction: f64) -> Result<f64, DdsError> {
    effective_bits_for(full_scale_fraction, 8)
}

pub fn effective_bits_for(full_scale_fraction: f64, bits: u32) -> Result<f64, DdsError> {
    if !(full_scale_fraction > 0.0 && full_scale_fraction <= 1.0) {
        return Err(DdsError::InvalidDac(format!(
            "full-scale fraction must be in (0, 1], got {full_scale_fraction}"
        )));
    }
    Ok((full_scale_fraction * f64::from(1u32 << (bits + 1))).log2())
}

/// Constant-amplitude pulse, used for readout tones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatPulse {
    pub amplitude: f64,
    pub duration: f64,
    pub phase: f64,
}

/// Pulse envelope carried by a tone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    Drag(PulseShape),
    Flat(FlatPulse),
}

impl Envelope {
    /// Length of the nonzero part of the envelope.
    pub fn duration(&self) -> f64 {
        match self {
            Envelope::Drag(s) => s.duration(),
            Envelope::Flat(f) => f.duration,
        }
    }

    pub fn peak(&self) -> f64 {
        match self {
            Envelope::Drag(s) => s.amplitude.abs(),
            Envelope::Flat(f) => f.amplitude.abs(),
        }
    }
}

/// A pulse placed at an absolute start time. `frame_phase` is added to the
/// pulse's own phase (virtual Z bookkeeping).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedPulse {
    pub start: f64,
    pub envelope: Envelope,
    #[serde(default)]
    pub frame_phase: f64,
}

/// One carrier with its time-ordered pulse schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub carrier_frequency: f64,
    pub pulses: Vec<TimedPulse>,
    #[serde(default)]
    pub phase_origin: f64,
    /// Anharmonicity (rad/s) in the DRAG quadrature denominator.
    #[serde(default = "default_drag_reference")]
    pub drag_reference: f64,
}

fn default_drag_reference() -> f64 {
    DEFAULT_DRAG_REFERENCE
}

impl ToneSpec {
    pub fn new(carrier_frequency: f64) -> Self {
        Self {
            carrier_frequency,
            pulses: Vec::new(),
            phase_origin: 0.0,
            drag_reference: DEFAULT_DRAG_REFERENCE,
        }
    }

    pub fn end_time(&self) -> f64 {
        self.pulses
            .iter()
            .map(|p| p.start + p.envelope.duration())
            .fold(0.0, f64::max)
    }

    /// Calls `f(n, z)` for every sample index `n` in `[first, first + len)`
    /// that falls inside a pulse, with `z` the complex baseband there.
    fn for_each_sample(
        &self,
        sample_rate: f64,
        first: i64,
        len: usize,
        mut f: impl FnMut(i64, Complex64),
    ) {
        let last = first + len as i64;
        for p in &self.pulses {
            let end = p.start + p.envelope.duration();
            let lo = ((p.start * sample_rate) - 1e-9).ceil() as i64;
            let hi = ((end * sample_rate) + 1e-9).floor() as i64;
            let lo = lo.max(first);
            let hi = hi.min(last - 1);
            if lo > hi {
                continue;
            }
            match &p.envelope {
                Envelope::Drag(shape) => {
                    let prepared = PreparedPulse::new(shape, self.drag_reference);
                    for n in lo..=hi {
                        let tau = n as f64 / sample_rate - p.start;
                        f(n, prepared.baseband(tau, p.frame_phase));
                    }
                }
                Envelope::Flat(flat) => {
                    let z = Complex64::from_polar(flat.amplitude, -(flat.phase + p.frame_phase));
                    for n in lo..=hi {
                        let tau = n as f64 / sample_rate - p.start;
                        if tau < flat.duration {
                            f(n, z);
                        }
                    }
                }
            }
        }
    }
}

/// How the carrier phase is referenced when a schedule is cut into segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Phase follows global time; segment boundaries are invisible.
    Continuous,
    /// Phase restarts at every segment boundary (the hazard being modeled).
    ResetPerSegment,
}

/// Carrier phase `2π · frac(f n / f_s) + φ₀`.
#[inline]
pub fn carrier_phase(frequency: f64, sample_rate: f64, n: i64, origin: f64) -> f64 {
    let cycles = (frequency / sample_rate) * n as f64;
    TAU * (cycles - cycles.floor()) + origin
}

/// Quantized DAC output with its pre-quantization values.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledWaveform {
    pub codes: Vec<i32>,
    /// Ideal samples in full-scale units.
    pub ideal: Vec<f64>,
    pub sample_rate: f64,
    pub bits: u32,
    /// Global index of `codes[0]`.
    pub first_sample: i64,
}

impl SampledWaveform {
    pub fn t_start(&self) -> f64 {
        self.first_sample as f64 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn scale(&self) -> f64 {
        f64::from(1u32 << (self.bits - 1))
    }

    /// Codes converted back to full-scale units.
    pub fn quantized(&self) -> Vec<f64> {
        let inv = 1.0 / self.scale();
        self.codes.iter().map(|&c| f64::from(c) * inv).collect()
    }

    /// Appends an abutting waveform.
    pub fn concat(mut self, other: &SampledWaveform) -> Result<Self, DdsError> {
        if other.first_sample != self.first_sample + self.len() as i64
            || other.bits != self.bits
            || other.sample_rate != self.sample_rate
        {
            return Err(DdsError::InvalidSpan(
                "waveforms are not abutting or differ in format".into(),
            ));
        }
        self.codes.extend_from_slice(&other.codes);
        self.ideal.extend_from_slice(&other.ideal);
        Ok(self)
    }
}

/// Samples `n` with `t0 <= n / f_s < t1`, as `(first, len)`.
pub fn sample_span(sample_rate: f64, t_span: (f64, f64)) -> Result<(i64, usize), DdsError> {
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(DdsError::InvalidSpan(format!("({t0}, {t1})")));
    }
    let index = |t: f64| {
        let x = t * sample_rate;
        if (x - x.round()).abs() < 1e-6 {
            x.round() as i64
        } else {
            x.ceil() as i64
        }
    };
    let first = index(t0);
    Ok((first, (index(t1) - first) as usize))
}

fn check_nyquist(tones: &[ToneSpec], sample_rate: f64) -> Result<(), DdsError> {
    for (index, tone) in tones.iter().enumerate() {
        if !(tone.carrier_frequency.abs() < sample_rate / 2.0) {
            return Err(DdsError::Nyquist {
                index,
                frequency_hz: tone.carrier_frequency,
                sample_rate,
            });
        }
    }
    Ok(())
}

/// Sums the modulated tones over `len` samples starting at global index
/// `first`. With `phase_base = Some(b)`, carrier phase is computed from
/// `n - b` instead of `n`.
pub fn render_ideal(
    tones: &[ToneSpec],
    sample_rate: f64,
    first: i64,
    len: usize,
    phase_base: Option<i64>,
) -> Result<Vec<f64>, DdsError> {
    check_nyquist(tones, sample_rate)?;
    let mut out = vec![0.0; len];
    let base = phase_base.unwrap_or(0);
    for tone in tones {
        let f = tone.carrier_frequency;
        tone.for_each_sample(sample_rate, first, len, |n, z| {
            let theta = carrier_phase(f, sample_rate, n - base, tone.phase_origin);
            let (s, c) = theta.sin_cos();
            out[(n - first) as usize] += z.re * c - z.im * s;
        });
    }
    Ok(out)
}

/// [`render_ideal`] together with the [`activity_mask`] of the same tones,
/// visiting each pulse sample once.
pub fn render_with_activity(
    tones: &[ToneSpec],
    sample_rate: f64,
    first: i64,
    len: usize,
    threshold: f64,
) -> Result<(Vec<f64>, Vec<bool>), DdsError> {
    check_nyquist(tones, sample_rate)?;
    let mut out = vec![0.0; len];
    let mut mask = vec![false; len];
    for tone in tones {
        let f = tone.carrier_frequency;
        tone.for_each_sample(sample_rate, first, len, |n, z| {
            let k = (n - first) as usize;
            let theta = carrier_phase(f, sample_rate, n, tone.phase_origin);
            let (s, c) = theta.sin_cos();
            out[k] += z.re * c - z.im * s;
            if z.norm() >= threshold {
                mask[k] = true;
            }
        });
    }
    Ok((out, mask))
}

/// Quantizes ideal full-scale samples, failing on the first clipped sample.
pub fn quantize(
    ideal: Vec<f64>,
    dac: &DacConfig,
    first_sample: i64,
) -> Result<SampledWaveform, DdsError> {
    dac.validate()?;
    let mut codes = Vec::with_capacity(ideal.len());
    for (index, &v) in ideal.iter().enumerate() {
        if !(v.abs() <= 1.0 + 1e-12) {
            return Err(DdsError::Clipping { index, value: v });
        }
        codes.push(dac.quantize(v));
    }
    Ok(SampledWaveform {
        codes,
        ideal,
        sample_rate: dac.sample_rate,
        bits: dac.bits,
        first_sample,
    })
}

/// Modulates, sums and quantizes the tones over `t_span`.
pub fn synthesize(
    tones: &[ToneSpec],
    dac: &DacConfig,
    t_span: (f64, f64),
) -> Result<SampledWaveform, DdsError> {
    dac.validate()?;
    let (first, len) = sample_span(dac.sample_rate, t_span)?;
    let ideal = render_ideal(tones, dac.sample_rate, first, len, None)?;
    quantize(ideal, dac, first)
}

/// Synthesizes each `[boundaries[k], boundaries[k+1])` separately and
/// concatenates the results.
pub fn synthesize_segments(
    tones: &[ToneSpec],
    dac: &DacConfig,
    boundaries: &[f64],
    mode: PhaseMode,
) -> Result<SampledWaveform, DdsError> {
    if boundaries.len() < 2 {
        return Err(DdsError::InvalidSpan("need at least two boundaries".into()));
    }
    dac.validate()?;
    let mut out: Option<SampledWaveform> = None;
    for pair in boundaries.windows(2) {
        let (first, len) = sample_span(dac.sample_rate, (pair[0], pair[1]))?;
        let base = match mode {
            PhaseMode::Continuous => None,
            PhaseMode::ResetPerSegment => Some(first),
        };
        let ideal = render_ideal(tones, dac.sample_rate, first, len, base)?;
        let seg = quantize(ideal, dac, first)?;
        out = Some(match out {
            None => seg,
            Some(acc) => acc.concat(&seg)?,
        });
    }
    Ok(out.expect("at least one segment"))
}

/// Per-sample drive indicator: true where any tone's envelope magnitude is
/// at least `threshold` of full scale.
pub fn activity_mask(
    tones: &[ToneSpec],
    sample_rate: f64,
    first: i64,
    len: usize,
    threshold: f64,
) -> Vec<bool> {
    let mut mask = vec![false; len];
    for tone in tones {
        tone.for_each_sample(sample_rate, first, len, |n, z| {
            if z.norm() >= threshold {
                mask[(n - first) as usize] = true;
            }
        });
    }
    mask
}

fn default_tau() -> f64 {
    31e-6
}
fn default_d_sat() -> f64 {
    0.2
}
fn default_threshold() -> f64 {
    1e-3
}

/// Activity-driven multiplicative amplitude droop with memory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionModel {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_d_sat")]
    pub d_sat: f64,
    #[serde(default = "default_threshold")]
    pub activity_threshold: f64,
    #[serde(skip)]
    pub state: f64,
}

impl Default for DistortionModel {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            d_sat: default_d_sat(),
            activity_threshold: default_threshold(),
            state: 0.0,
        }
    }
}

impl DistortionModel {
    pub fn disabled() -> Self {
        Self {
            d_sat: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DdsError> {
        if !(self.tau > 0.0) || !(0.0..1.0).contains(&self.d_sat) || self.activity_threshold < 0.0 {
            return Err(DdsError::InvalidDac(format!(
                "invalid distortion model: tau={}, d_sat={}, threshold={}",
                self.tau, self.d_sat, self.activity_threshold
            )));
        }
        Ok(())
    }

    /// Advances the droop by one sample of length `dt` and returns the new
    /// value. Uses the exact relaxation factor for a held activity level.
    #[inline]
    pub fn step(&mut self, active: bool, alpha: f64) -> f64 {
        let target = if active { self.d_sat } else { 0.0 };
        self.state += alpha * (target - self.state);
        self.state
    }

    /// Per-sample relaxation factor `1 - exp(-dt/τ)`.
    pub fn alpha(&self, dt: f64) -> f64 {
        -(-dt / self.tau).exp_m1()
    }

    /// Relaxes the droop over an idle interval.
    pub fn idle(&mut self, duration: f64) {
        self.state *= (-duration / self.tau).exp();
    }

    /// Scales `samples` in place by `(1 - d_k)`.
    pub fn apply_in_place(&mut self, samples: &mut [f64], activity: &[bool], dt: f64) {
        let alpha = self.alpha(dt);
        for (s, &a) in samples.iter_mut().zip(activity) {
            let d = self.step(a, alpha);
            *s *= 1.0 - d;
        }
    }

    /// Advances the droop over `activity` without touching any samples,
    /// relaxing each run of equal activity in closed form.
    pub fn advance(&mut self, activity: &[bool], dt: f64) {
        for run in activity.chunk_by(|a, b| a == b) {
            let target = if run[0] { self.d_sat } else { 0.0 };
            let decay = (-(run.len() as f64) * dt / self.tau).exp();
            self.state = target + (self.state - target) * decay;
        }
    }
}

/// Applies the droop to a whole waveform and requantizes.
pub fn apply_distortion(
    w: &SampledWaveform,
    model: &mut DistortionModel,
    activity: &[bool],
) -> Result<SampledWaveform, DdsError> {
    if activity.len() != w.len() {
        return Err(DdsError::InvalidSpan(format!(
            "activity has {} samples, waveform has {}",
            activity.len(),
            w.len()
        )));
    }
    let mut ideal = w.ideal.clone();
    model.apply_in_place(&mut ideal, activity, 1.0 / w.sample_rate);
    let dac = DacConfig {
        sample_rate: w.sample_rate,
        bits: w.bits,
        full_scale: 1.0,
    };
    quantize(ideal, &dac, w.first_sample)
}

/// Complex baseband samples on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseband {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub t_start: f64,
}

impl Baseband {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 / self.sample_rate
    }

    /// Analytic baseband of `tones` referenced to `f_ref`, sampled at
    /// `sample_rate` over `[t0, t0 + len/sample_rate)`.
    pub fn analytic(tones: &[ToneSpec], f_ref: f64, sample_rate: f64, t0: f64, len: usize) -> Self {
        let first = (t0 * sample_rate).round() as i64;
        let mut samples = vec![Complex64::new(0.0, 0.0); len];
        for tone in tones {
            let offset = tone.carrier_frequency - f_ref;
            tone.for_each_sample(sample_rate, first, len, |n, z| {
                let t = n as f64 / sample_rate;
                let rot = Complex64::from_polar(1.0, TAU * offset * t + tone.phase_origin);
                samples[(n - first) as usize] += z * rot;
            });
        }
        Self {
            samples,
            sample_rate,
            t_start: first as f64 / sample_rate,
        }
    }
}

/// Downconverter: mix with `e^{-iθ_ref}`, Hann-windowed sinc low-pass,
/// polyphase decimation.
#[derive(Clone, Debug)]
pub struct Demodulator {
    pub f_ref: f64,
    pub cutoff: f64,
    pub sample_rate: f64,
    pub decimation: usize,
    taps: Vec<f64>,
}

/// Default low-pass cutoff (Hz).
pub const DEFAULT_CUTOFF: f64 = 500e6;

impl Demodulator {
    /// Builds the filter; `decimation = None` picks
    /// `max(1, floor(f_s / (20 · cutoff)))`.
    pub fn new(
        sample_rate: f64,
        f_ref: f64,
        cutoff: f64,
        decimation: Option<usize>,
    ) -> Result<Self, DdsError> {
        if !(f_ref > 0.0 && f_ref < sample_rate / 2.0) {
            return Err(DdsError::InvalidDemodulation(format!(
                "reference {f_ref} Hz must lie in (0, f_s/2) for f_s = {sample_rate}"
            )));
        }
        if !(cutoff > 0.0 && cutoff < f_ref) {
            return Err(DdsError::InvalidDemodulation(format!(
                "cutoff {cutoff} Hz must lie in (0, f_ref = {f_ref})"
            )));
        }
        let decimation =
            decimation.unwrap_or_else(|| ((sample_rate / (20.0 * cutoff)).floor() as usize).max(1));
        if decimation == 0 {
            return Err(DdsError::InvalidDemodulation(
                "decimation must be >= 1".into(),
            ));
        }
        let min_taps = (4.0 * sample_rate / cutoff).ceil() as usize;
        let n = min_taps | 1;
        let m = (n / 2) as f64;
        let fc = cutoff / sample_rate;
        let mut taps: Vec<f64> = (0..n)
            .map(|k| {
                let x = k as f64 - m;
                let sinc = if x == 0.0 {
                    2.0 * fc
                } else {
                    (TAU * fc * x).sin() / (PI * x)
                };
                let w = 0.5 * (1.0 - (TAU * k as f64 / (n - 1) as f64).cos());
                sinc * w
            })
            .collect();
        let gain: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= gain;
        }
        Ok(Self {
            f_ref,
            cutoff,
            sample_rate,
            decimation,
            taps,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn output_rate(&self) -> f64 {
        self.sample_rate / self.decimation as f64
    }

    /// Demodulates real samples whose first element has global index
    /// `first_sample`. Output `j` corresponds to input `j · decimation`.
    pub fn process(&self, samples: &[f64], first_sample: i64) -> Baseband {
        let out = if samples.len() > 4 * self.taps.len() {
            self.filter_fft(samples, first_sample)
        } else {
            self.filter_direct(&self.mix(samples, first_sample))
        };
        Baseband {
            samples: out,
            sample_rate: self.output_rate(),
            t_start: first_sample as f64 / self.sample_rate,
        }
    }

    fn mix(&self, samples: &[f64], first_sample: i64) -> Vec<Complex64> {
        samples
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if x == 0.0 {
                    return Complex64::default();
                }
                let theta =
                    carrier_phase(self.f_ref, self.sample_rate, first_sample + k as i64, 0.0);
                let (s, c) = theta.sin_cos();
                Complex64::new(2.0 * x * c, -2.0 * x * s)
            })
            .collect()
    }

    fn filter_direct(&self, z: &[Complex64]) -> Vec<Complex64> {
        let len = z.len();
        let re: Vec<f64> = z.iter().map(|c| c.re).collect();
        let im: Vec<f64> = z.iter().map(|c| c.im).collect();
        let half = self.taps.len() / 2;
        (0..len.div_ceil(self.decimation))
            .map(|j| {
                let center = j * self.decimation;
                let lo = center.saturating_sub(half);
                let hi = (center + half + 1).min(len);
                let tap0 = lo + half - center;
                let taps = &self.taps[tap0..tap0 + (hi - lo)];
                Complex64::new(dot(taps, &re[lo..hi]), dot(taps, &im[lo..hi]))
            })
            .collect()
    }

    /// Overlap-save convolution of the real input with the band-pass kernel
    /// `2 h[k] e^{iω(k - half)}`, rotated to baseband at the decimated
    /// outputs only. Equals `filter_direct(mix(..))` up to rounding.
    fn filter_fft(&self, z: &[f64], first_sample: i64) -> Vec<Complex64> {
        let n_taps = self.taps.len();
        let half = n_taps / 2;
        let size = (4 * n_taps).next_power_of_two();
        let step = size - (n_taps - 1);
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let omega = TAU * self.f_ref / self.sample_rate;
        let mut h = vec![Complex64::default(); size];
        for (k, (d, &t)) in h.iter_mut().zip(&self.taps).enumerate() {
            let phase = omega * (k as f64 - half as f64);
            *d = Complex64::from_polar(2.0 * t / size as f64, phase);
        }
        fwd.process(&mut h);

        // conv[n] = Σ_k taps[k] z[n - k]; output j reads conv[j·D + half].
        // Block `start` yields conv[start..start + step] from z[start - (N-1)..].
        let n_out = z.len().div_ceil(self.decimation);
        let mut out = Vec::with_capacity(n_out);
        let mut buf = vec![Complex64::default(); size];
        let mut scratch = vec![
            Complex64::default();
            fwd.get_inplace_scratch_len()
                .max(inv.get_inplace_scratch_len())
        ];
        let mut start = 0;
        while out.len() < n_out {
            buf.fill(Complex64::default());
            let lo = start as isize - (n_taps - 1) as isize;
            let src_lo = lo.max(0) as usize;
            let src_hi = ((lo + size as isize).max(0) as usize).min(z.len());
            if src_lo < src_hi {
                let dst = (src_lo as isize - lo) as usize;
                for (d, &x) in buf[dst..dst + (src_hi - src_lo)]
                    .iter_mut()
                    .zip(&z[src_lo..src_hi])
                {
                    d.re = x;
                }
            }
            fwd.process_with_scratch(&mut buf, &mut scratch);
            for (b, g) in buf.iter_mut().zip(&h) {
                *b *= g;
            }
            inv.process_with_scratch(&mut buf, &mut scratch);
            while out.len() < n_out {
                let c = out.len() * self.decimation + half;
                if c >= start + step {
                    break;
                }
                let theta = carrier_phase(
                    self.f_ref,
                    self.sample_rate,
                    first_sample + (c - half) as i64,
                    0.0,
                );
                out.push(buf[c - start + n_taps - 1] * Complex64::from_polar(1.0, -theta));
            }
            start += step;
        }
        out
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0; LANES];
    let (ca, ra) = a.split_at(a.len() - a.len() % LANES);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(LANES).zip(cb.chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Demodulates the quantized codes of `w` at `f_ref`.
pub fn demodulate(w: &SampledWaveform, f_ref: f64, cutoff: f64) -> Result<Baseband, DdsError> {
    let demod = Demodulator::new(w.sample_rate, f_ref, cutoff, None)?;
    Ok(demod.process(&w.quantized(), w.first_sample))
}

/// Sidecar metadata for a raw waveform file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformSidecar {
    pub sample_rate_hz: f64,
    pub bits: u32,
    pub t_start_s: f64,
    pub n_samples: usize,
}

/// Path of the JSON sidecar next to a raw waveform file.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut name = raw.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Little-endian raw samples: one byte per sample up to 8 bits, two above.
pub fn encode_raw(w: &SampledWaveform) -> Vec<u8> {
    if w.bits <= 8 {
        w.codes.iter().map(|&c| (c as i8) as u8).collect()
    } else {
        w.codes
            .iter()
            .flat_map(|&c| (c as i16).to_le_bytes())
            .collect()
    }
}

pub fn decode_raw(bytes: &[u8], sidecar: &WaveformSidecar) -> Result<SampledWaveform, DdsError> {
    let width = if sidecar.bits <= 8 { 1 } else { 2 };
    if bytes.len() != sidecar.n_samples * width {
        return Err(DdsError::InvalidSpan(format!(
            "expected {} bytes, found {}",
            sidecar.n_samples * width,
            bytes.len()
        )));
    }
    let codes: Vec<i32> = if width == 1 {
        bytes.iter().map(|&b| i32::from(b as i8)).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|c| i32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect()
    };
    let scale = f64::from(1u32 << (sidecar.bits - 1));
    let ideal = codes.iter().map(|&c| f64::from(c) / scale).collect();
    Ok(SampledWaveform {
        codes,
        ideal,
        sample_rate: sidecar.sample_rate_hz,
        bits: sidecar.bits,
        first_sample: (sidecar.t_start_s * sidecar.sample_rate_hz).round() as i64,
    })
}

impl SampledWaveform {
    pub fn sidecar(&self) -> WaveformSidecar {
        WaveformSidecar {
            sample_rate_hz: self.sample_rate,
            bits: self.bits,
            t_start_s: self.t_start(),
            n_samples: self.len(),
        }
    }

    /// Writes the raw file and its sidecar.
    pub fn write_raw(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, encode_raw(self))?;
        fs::write(
            sidecar_path(path),
            serde_json::to_vec_pretty(&self.sidecar()).map_err(std::io::Error::other)?,
        )
    }

    /// Reads a raw file and sidecar. Ideal values are reconstructed from
    /// the codes.
    pub fn read_raw(path: &Path) -> crate::Result<Self> {
        let sidecar: WaveformSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        let bytes = fs::read(path)?;
        Ok(decode_raw(&bytes, &sidecar)?)
    }

    /// CSV of `index,t_s,ideal,quantized,code`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "index,t_s,ideal,quantized,code")?;
        let scale = self.scale();
        for (k, (&c, &v)) in self.codes.iter().zip(&self.ideal).enumerate() {
            let t = (self.first_sample + k as i64) as f64 / self.sample_rate;
            writeln!(out, "{k},{t:.6e},{v:.9},{:.9},{c}", f64::from(c) / scale)?;
        }
        Ok(())
    }
}
