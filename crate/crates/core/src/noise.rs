//! Phase-noise spectra, dephasing PSDs, first-order filter functions and the
//! dephasing infidelity floor of driven and idle gates.
//!
//! Conventions: frequencies `f` are in Hz and angular frequencies `ω` in
//! rad/s. The dephasing PSD is unilateral, `S(ω) = ½·ω²·10^(L/10)`, and the
//! dephasing exponent of a control sequence is
//! `χ = (1/π)·∫ S(ω)·F(ω)/ω² dω`, reported as the infidelity
//! `a = (1 − e^(−χ))/2`. For free evolution `χ` is the variance of the
//! accumulated phase.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::NoiseError;

type Result<T, E = NoiseError> = std::result::Result<T, E>;

/// Single-sideband phase noise `L(f)` in dBc/Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseNoiseSpectrum {
    /// `(offset frequency Hz, dBc/Hz)`, strictly increasing in frequency.
    pub points: Vec<(f64, f64)>,
    pub label: String,
}

impl PhaseNoiseSpectrum {
    pub fn new(points: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        let s = PhaseNoiseSpectrum {
            points,
            label: label.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(NoiseError::TooFewPoints { needed: 1, got: 0 });
        }
        let mut prev = 0.0;
        for (i, &(f, l)) in self.points.iter().enumerate() {
            if !(f.is_finite() && f > 0.0) {
                return Err(NoiseError::InvalidArgument(format!(
                    "point {i}: frequency {f} must be positive"
                )));
            }
            if f <= prev {
                return Err(NoiseError::InvalidArgument(format!(
                    "point {i}: frequency {f} does not increase"
                )));
            }
            if !l.is_finite() {
                return Err(NoiseError::InvalidArgument(format!("point {i}: level {l}")));
            }
            prev = f;
        }
        Ok(())
    }

    /// Level at `f` (dBc/Hz), linear in `log10 f` between points and held
    /// constant outside them.
    pub fn level_at(&self, f: f64) -> f64 {
        let pts = &self.points;
        let k = pts.partition_point(|p| p.0 < f);
        if k == 0 {
            return pts[0].1;
        }
        if k == pts.len() {
            return pts[k - 1].1;
        }
        let (f0, l0) = pts[k - 1];
        let (f1, l1) = pts[k];
        let t = (f / f0).ln() / (f1 / f0).ln();
        l0 + t * (l1 - l0)
    }
}

/// Reads `freq_hz,dBc_per_hz` rows. Blank lines, `#` comments and a leading
/// non-numeric header line are skipped. Unicode minus signs are accepted.
pub fn load_spectrum(reader: impl BufRead, label: impl Into<String>) -> Result<PhaseNoiseSpectrum> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut seen_data = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| NoiseError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let text = text.replace('\u{2212}', "-");
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [f, l] => f.parse::<f64>().ok().zip(l.parse::<f64>().ok()),
            _ => None,
        };
        let Some((f, l)) = parsed else {
            if !seen_data && points.is_empty() && fields.len() == 2 {
                seen_data = true;
                continue;
            }
            return Err(NoiseError::Parse {
                line: line_no,
                reason: format!("expected two numeric columns, got {text:?}"),
            });
        };
        seen_data = true;
        if !(f.is_finite() && f > 0.0) {
            return Err(NoiseError::Parse {
                line: line_no,
                reason: format!("frequency {f} must be positive"),
            });
        }
        if !l.is_finite() {
            return Err(NoiseError::Parse {
                line: line_no,
                reason: format!("level {l} is not finite"),
            });
        }
        if let Some(&(prev, _)) = points.last() {
            if f <= prev {
                return Err(NoiseError::Parse {
                    line: line_no,
                    reason: format!("frequency {f} does not increase (previous {prev})"),
                });
            }
        }
        points.push((f, l));
    }
    PhaseNoiseSpectrum::new(points, label)
}

/// Writes the spectrum in the format read by [`load_spectrum`].
pub fn write_spectrum_csv(s: &PhaseNoiseSpectrum, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "freq_hz,dbc_per_hz")?;
    for &(f, l) in &s.points {
        writeln!(out, "{f},{l}")?;
    }
    Ok(())
}

/// Extends `s` down to `f_min` along the straight line through its two
/// lowest points in `(log10 f, dBc/Hz)`, on a grid of `per_decade` points.
pub fn extrapolate_low(
    s: &PhaseNoiseSpectrum,
    f_min: f64,
    per_decade: usize,
) -> Result<PhaseNoiseSpectrum> {
    s.validate()?;
    if s.points.len() < 2 {
        return Err(NoiseError::TooFewPoints {
            needed: 2,
            got: s.points.len(),
        });
    }
    if !(f_min.is_finite() && f_min > 0.0) || per_decade == 0 {
        return Err(NoiseError::InvalidArgument(format!(
            "f_min {f_min} and per_decade {per_decade} must be positive"
        )));
    }
    let (f0, l0) = s.points[0];
    let (f1, l1) = s.points[1];
    if f_min >= f0 {
        return Ok(s.clone());
    }
    let slope = (l1 - l0) / (f1 / f0).log10();
    let decades = (f0 / f_min).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    let mut points: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let f = f_min * 10f64.powf(k as f64 / per_decade as f64);
            (f, l0 + slope * (f / f0).log10())
        })
        .filter(|&(f, _)| f < f0)
        .collect();
    points.extend_from_slice(&s.points);
    PhaseNoiseSpectrum::new(points, s.label.clone())
}

/// Unilateral dephasing PSD samples `(ω, S(ω))`, interpolated linearly in
/// `(ln ω, ln S)` (linearly where an endpoint is zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DephasingPsd {
    pub samples: Vec<(f64, f64)>,
    pub label: String,
}

impl DephasingPsd {
    pub fn new(samples: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(NoiseError::TooFewPoints {
                needed: 2,
                got: samples.len(),
            });
        }
        let mut prev = 0.0;
        for (i, &(w, s)) in samples.iter().enumerate() {
            if !(w.is_finite() && w > prev) {
                return Err(NoiseError::InvalidArgument(format!(
                    "sample {i}: ω = {w} must be positive and increasing"
                )));
            }
            if !(s.is_finite() && s >= 0.0) {
                return Err(NoiseError::InvalidArgument(format!(
                    "sample {i}: S = {s} must be >= 0"
                )));
            }
            prev = w;
        }
        Ok(DephasingPsd {
            samples,
            label: label.into(),
        })
    }

    /// Constant `s0` over `[omega_min, omega_max]`.
    pub fn white(s0: f64, omega_min: f64, omega_max: f64) -> Result<Self> {
        DephasingPsd::new(vec![(omega_min, s0), (omega_max, s0)], "white")
    }

    pub fn omega_range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    /// `S(ω)`; `None` outside the sampled range.
    pub fn at(&self, omega: f64) -> Option<f64> {
        let (lo, hi) = self.omega_range();
        if !(omega >= lo && omega <= hi) {
            return None;
        }
        let pts = &self.samples;
        let k = pts.partition_point(|p| p.0 < omega).max(1);
        let (w0, s0) = pts[k - 1];
        let (w1, s1) = pts[k];
        let t = (omega / w0).ln() / (w1 / w0).ln();
        Some(if s0 > 0.0 && s1 > 0.0 {
            (s0.ln() + t * (s1 / s0).ln()).exp()
        } else {
            s0 + t * (s1 - s0)
        })
    }
}

/// `S = ½·ω²·10^(L/10)` for one point.
pub fn dephasing_psd_value(f_hz: f64, dbc_per_hz: f64) -> f64 {
    let w = TAU * f_hz;
    0.5 * w * w * 10f64.powf(dbc_per_hz / 10.0)
}

/// Converts every spectrum point to the dephasing PSD.
pub fn to_dephasing_psd(s: &PhaseNoiseSpectrum) -> Result<DephasingPsd> {
    s.validate()?;
    if s.points.len() < 2 {
        return Err(NoiseError::TooFewPoints {
            needed: 2,
            got: s.points.len(),
        });
    }
    let samples = s
        .points
        .iter()
        .map(|&(f, l)| (TAU * f, dephasing_psd_value(f, l)))
        .collect();
    DephasingPsd::new(samples, s.label.clone())
}

/// Writes `freq_hz,omega_rad_s,s_rad2_per_s`.
pub fn write_psd_csv(psd: &DephasingPsd, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "freq_hz,omega_rad_s,s_rad2_per_s")?;
    for &(w, s) in &psd.samples {
        writeln!(out, "{},{w},{s}", w / TAU)?;
    }
    Ok(())
}

/// Power-law phase-noise model `L(f) = 10·log10(h0 + h1/f + h2/f² + h3/f³)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawModel {
    pub label: String,
    /// Coefficients of `f⁰, f⁻¹, f⁻², f⁻³` (1/Hz).
    pub h: [f64; 4],
}

impl PowerLawModel {
    /// Close-in noise typical of a tone synthesized directly by a fast AWG.
    pub fn dds_like() -> Self {
        PowerLawModel {
            label: "dds-like".into(),
            h: [1e-15, 1e-10, 1e-6, 1e-4],
        }
    }

    /// A low-noise analog microwave generator.
    pub fn generator_like() -> Self {
        PowerLawModel {
            label: "generator-like".into(),
            h: [1e-15, 1e-12, 1e-8, 1e-5],
        }
    }

    pub fn level(&self, f: f64) -> f64 {
        let [h0, h1, h2, h3] = self.h;
        10.0 * (h0 + h1 / f + h2 / (f * f) + h3 / (f * f * f)).log10()
    }

    /// Samples the model on a log grid over `[f_min, f_max]`.
    pub fn spectrum(
        &self,
        f_min: f64,
        f_max: f64,
        per_decade: usize,
    ) -> Result<PhaseNoiseSpectrum> {
        if self.h.iter().any(|&h| !(h.is_finite() && h >= 0.0)) || self.h.iter().all(|&h| h == 0.0)
        {
            return Err(NoiseError::InvalidArgument(format!(
                "power-law coefficients {:?} must be non-negative and not all zero",
                self.h
            )));
        }
        let freqs = log_grid(f_min, f_max, per_decade)?;
        PhaseNoiseSpectrum::new(
            freqs.into_iter().map(|f| (f, self.level(f))).collect(),
            self.label.clone(),
        )
    }
}

/// Log-spaced grid from `lo` to `hi` inclusive with at least `per_decade`
/// points per decade.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || per_decade == 0 {
        return Err(NoiseError::InvalidArgument(format!(
            "log grid needs 0 < lo < hi and per_decade > 0, got [{lo}, {hi}], {per_decade}"
        )));
    }
    let n = ((hi / lo).log10() * per_decade as f64).ceil().max(1.0) as usize;
    let r = (hi / lo).ln();
    Ok((0..=n)
        .map(|k| match k {
            0 => lo,
            k if k == n => hi,
            k => lo * (r * k as f64 / n as f64).exp(),
        })
        .collect())
}

/// Piecewise-constant resonant drive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    pub duration: f64,
    /// Rabi rate Ω (rad/s); zero is free evolution.
    pub rabi: f64,
    /// Drive axis angle in the xy plane (rad).
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSegmentList {
    pub segments: Vec<ControlSegment>,
}

impl ControlSegmentList {
    pub fn new(segments: Vec<ControlSegment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(NoiseError::InvalidArgument(format!(
                    "segment {i}: duration {} must be positive",
                    s.duration
                )));
            }
            if !(s.rabi.is_finite() && s.phase.is_finite()) {
                return Err(NoiseError::InvalidArgument(format!("segment {i}: {s:?}")));
            }
        }
        Ok(ControlSegmentList { segments })
    }

    /// Idle gate of length `tau`.
    pub fn identity(tau: f64) -> Result<Self> {
        Self::new(vec![ControlSegment {
            duration: tau,
            rabi: 0.0,
            phase: 0.0,
        }])
    }

    /// Constant-amplitude `X_π` of length `tau`.
    pub fn x_pi(tau: f64) -> Result<Self> {
        Self::new(vec![ControlSegment {
            duration: tau,
            rabi: PI / tau,
            phase: 0.0,
        }])
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// `∫₀^d e^{ixs} ds`, stable at `x → 0`.
fn phase_integral(x: f64, d: f64) -> Complex64 {
    let h = 0.5 * x * d;
    let sinc = if h.abs() < 1e-8 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    };
    Complex64::from_polar(d * sinc, h)
}

/// Rotation by `angle` about the unit vector `n`.
fn rotation(n: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// First-order dephasing filter function
/// `F(ω) = ω²·Σ_j |∫₀^τ e^{iωt} R_zj(t) dt|²`, where `R_zj(t)` are the
/// components of `σz` toggled into the control frame, integrated
/// segment by segment in closed form.
pub fn filter_function(ctrl: &ControlSegmentList, omega: f64) -> f64 {
    let z = Vector3::z();
    let mut frame = Matrix3::<f64>::identity();
    let mut t0 = 0.0;
    let mut acc = [Complex64::new(0.0, 0.0); 3];
    for seg in &ctrl.segments {
        let d = seg.duration;
        let start = Complex64::from_polar(1.0, omega * t0);
        if seg.rabi == 0.0 {
            let i0 = start * phase_integral(omega, d);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += i0 * frame[(j, 2)];
            }
        } else {
            // Toggled z within the segment: a + b·cos(Ωs) − c·sin(Ωs).
            let n = Vector3::new(seg.phase.cos(), seg.phase.sin(), 0.0);
            let a = n * n.dot(&z);
            let b = z - a;
            let c = n.cross(&z);
            let i0 = phase_integral(omega, d);
            let ip = phase_integral(omega + seg.rabi, d);
            let im = phase_integral(omega - seg.rabi, d);
            let icos = 0.5 * (ip + im);
            let isin = (ip - im) / Complex64::new(0.0, 2.0);
            let ma = frame * a;
            let mb = frame * b;
            let mc = frame * c;
            for (j, acc_j) in acc.iter_mut().enumerate() {
                *acc_j += start * (i0 * ma[j] + icos * mb[j] - isin * mc[j]);
            }
            frame *= rotation(&n, -seg.rabi * d);
        }
        t0 += d;
    }
    omega * omega * acc.iter().map(|a| a.norm_sqr()).sum::<f64>()
}

/// Integration band and grid density for [`infidelity_floor`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    #[serde(default = "default_f_min")]
    pub f_min_hz: f64,
    #[serde(default = "default_f_max")]
    pub f_max_hz: f64,
    #[serde(default = "default_per_decade")]
    pub points_per_decade: usize,
}

fn default_f_min() -> f64 {
    1.0
}
fn default_f_max() -> f64 {
    1e8
}
fn default_per_decade() -> usize {
    200
}

impl Default for Band {
    fn default() -> Self {
        Band {
            f_min_hz: default_f_min(),
            f_max_hz: default_f_max(),
            points_per_decade: default_per_decade(),
        }
    }
}

/// Dephasing exponent and its split across the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    pub chi: f64,
    pub infidelity: f64,
    /// Share of `χ` from the lowest decade of the band.
    pub low_decade_fraction: f64,
    /// Share of `χ` from the highest decade of the band.
    pub high_decade_fraction: f64,
}

/// Log grid with `per_decade` points per decade that switches to uniform
/// spacing where the log spacing would exceed 1/16 of the filter-function
/// oscillation period `2π/τ` (scaled with the requested density).
fn integration_grid(lo: f64, hi: f64, per_decade: usize, tau: f64) -> Result<Vec<f64>> {
    let ratio = 10f64.powf(1.0 / per_decade as f64);
    let h = TAU / tau / 16.0 * (200.0 / per_decade as f64).min(1.0);
    let knee = h / (ratio - 1.0);
    if !(knee < hi) {
        return log_grid(lo, hi, per_decade);
    }
    let mut grid = if knee > lo {
        log_grid(lo, knee, per_decade)?
    } else {
        vec![lo]
    };
    let start = *grid.last().expect("grid is non-empty");
    let n = ((hi - start) / h).ceil().max(1.0) as usize;
    let step = (hi - start) / n as f64;
    grid.extend((1..=n).map(|k| if k == n { hi } else { start + k as f64 * step }));
    Ok(grid)
}

/// `(1 − e^(−χ))/2`.
pub fn infidelity_from_chi(chi: f64) -> f64 {
    -0.5 * (-chi).exp_m1()
}

/// `χ = (1/π)·∫ S·F/ω² dω` by the trapezoid rule in `ln ω`, with the
/// edge-decade sensitivity of the result.
pub fn dephasing_floor(
    psd: &DephasingPsd,
    ctrl: &ControlSegmentList,
    band: &Band,
) -> Result<FloorReport> {
    if band.points_per_decade < 2 {
        return Err(NoiseError::InvalidArgument(
            "need at least 2 points per decade".into(),
        ));
    }
    let w_lo = TAU * band.f_min_hz;
    let w_hi = TAU * band.f_max_hz;
    let grid = integration_grid(w_lo, w_hi, band.points_per_decade, ctrl.duration())?;
    let (p_lo, p_hi) = psd.omega_range();
    let tol = 1e-9;
    if p_lo > w_lo * (1.0 + tol) || p_hi < w_hi * (1.0 - tol) {
        let mut gaps = Vec::new();
        if p_lo > w_lo * (1.0 + tol) {
            gaps.push(format!("[{:.6e}, {:.6e}] Hz", band.f_min_hz, p_lo / TAU));
        }
        if p_hi < w_hi * (1.0 - tol) {
            gaps.push(format!("[{:.6e}, {:.6e}] Hz", p_hi / TAU, band.f_max_hz));
        }
        return Err(NoiseError::Coverage(format!(
            "missing {}",
            gaps.join(" and ")
        )));
    }
    let integrand: Vec<f64> = grid
        .par_iter()
        .map(|&w| {
            let s = psd.at(w.clamp(p_lo, p_hi)).unwrap_or(0.0);
            // Integrating in ln ω contributes a factor ω.
            s * filter_function(ctrl, w) / w
        })
        .collect();
    let low_edge = w_lo * 10.0;
    let high_edge = w_hi / 10.0;
    let (mut total, mut low, mut high) = (0.0, 0.0, 0.0);
    for k in 1..grid.len() {
        let piece = 0.5 * (integrand[k] + integrand[k - 1]) * (grid[k] / grid[k - 1]).ln();
        total += piece;
        let mid = (grid[k] * grid[k - 1]).sqrt();
        if mid < low_edge {
            low += piece;
        }
        if mid > high_edge {
            high += piece;
        }
    }
    let chi = total / PI;
    let share = |x: f64| if total > 0.0 { x / total } else { 0.0 };
    Ok(FloorReport {
        chi,
        infidelity: infidelity_from_chi(chi),
        low_decade_fraction: share(low),
        high_decade_fraction: share(high),
    })
}

/// Infidelity `(1 − e^(−χ))/2` of `ctrl` under `psd` over `band`.
pub fn infidelity_floor(psd: &DephasingPsd, ctrl: &ControlSegmentList, band: &Band) -> Result<f64> {
    Ok(dephasing_floor(psd, ctrl, band)?.infidelity)
}

/// One gate length of an infidelity-versus-length table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfidelityRow {
    pub gate_length: f64,
    /// Idle and `X_π` infidelity per source, in source order.
    pub identity: Vec<f64>,
    pub x_pi: Vec<f64>,
}

/// Idle and `X_π` infidelity floors of every source at every gate length.
pub fn infidelity_curves(
    sources: &[DephasingPsd],
    gate_lengths: &[f64],
    band: &Band,
) -> Result<Vec<InfidelityRow>> {
    gate_lengths
        .iter()
        .map(|&tau| {
            let idle = ControlSegmentList::identity(tau)?;
            let pi = ControlSegmentList::x_pi(tau)?;
            Ok(InfidelityRow {
                gate_length: tau,
                identity: sources
                    .iter()
                    .map(|p| infidelity_floor(p, &idle, band))
                    .collect::<Result<_>>()?,
                x_pi: sources
                    .iter()
                    .map(|p| infidelity_floor(p, &pi, band))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Writes `gate_length_s` then `x_pi_<label>` and `identity_<label>` columns.
pub fn write_infidelity_csv(
    labels: &[String],
    rows: &[InfidelityRow],
    mut out: impl Write,
) -> std::io::Result<()> {
    write!(out, "gate_length_s")?;
    for l in labels {
        write!(out, ",x_pi_{l},identity_{l}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{}", r.gate_length)?;
        for (x, i) in r.x_pi.iter().zip(&r.identity) {
            write!(out, ",{x},{i}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Default gate lengths for the infidelity table: 1 ns to 10 µs, 10 per decade.
pub fn default_gate_lengths() -> Vec<f64> {
    (0..=40)
        .map(|k| 1e-9 * 10f64.powf(k as f64 / 10.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;
    use proptest::prelude::*;

    type C2 = Matrix2<Complex64>;

    fn pauli() -> [C2; 3] {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        [
            C2::new(o, l, l, o),
            C2::new(o, -i, i, o),
            C2::new(l, o, o, -l),
        ]
    }

    /// Brute-force filter function: SU(2) propagator at every quadrature
    /// node and composite Simpson integration of the toggled components.
    fn brute_force(ctrl: &ControlSegmentList, omega: f64, nodes_per_segment: usize) -> f64 {
        let [sx, sy, sz] = pauli();
        let mut u = C2::identity();
        let mut t0 = 0.0;
        let mut acc = [Complex64::new(0.0, 0.0); 3];
        for seg in &ctrl.segments {
            let n = nodes_per_segment + nodes_per_segment % 2;
            let h = seg.duration / n as f64;
            let step = |s: f64| {
                // exp(-i θ/2 n·σ) = cos(θ/2) I - i sin(θ/2) n·σ
                let th = seg.rabi * s;
                let ns = sx * Complex64::new(seg.phase.cos(), 0.0)
                    + sy * Complex64::new(seg.phase.sin(), 0.0);
                C2::identity() * Complex64::new((0.5 * th).cos(), 0.0)
                    - ns * Complex64::new(0.0, (0.5 * th).sin())
            };
            for k in 0..=n {
                let s = k as f64 * h;
                let uk = step(s) * u;
                let toggled = uk.adjoint() * sz * uk;
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                } * h
                    / 3.0;
                let ph = Complex64::from_polar(1.0, omega * (t0 + s));
                for (j, sj) in [sx, sy, sz].iter().enumerate() {
                    let r = 0.5 * (sj * toggled).trace().re;
                    acc[j] += ph * r * w;
                }
            }
            u = step(seg.duration) * u;
            t0 += seg.duration;
        }
        omega * omega * acc.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    #[test]
    fn psd_spot_values() {
        assert_relative_eq!(
            dephasing_psd_value(1.0 / TAU, 0.0),
            0.5,
            max_relative = 1e-12
        );
        let oracle = 0.5 * (TAU * 1e4) * (TAU * 1e4) * 1e-10;
        assert_relative_eq!(
            dephasing_psd_value(1e4, -100.0),
            oracle,
            max_relative = 1e-12
        );
        assert!((oracle - 0.1974).abs() < 1e-4);
        let ratio = dephasing_psd_value(3e3, -120.0) / dephasing_psd_value(3e3, -100.0);
        assert_relative_eq!(ratio, 1e-2, max_relative = 1e-12);
    }

    #[test]
    fn parses_two_point_csv() {
        let s = load_spectrum("10,\u{2212}90\n100,-100\n".as_bytes(), "t").unwrap();
        assert_eq!(s.points, vec![(10.0, -90.0), (100.0, -100.0)]);
        let s = load_spectrum(
            "freq_hz,dbc_per_hz\n# note\n\n10,-90\n100,-100\n".as_bytes(),
            "t",
        )
        .unwrap();
        assert_eq!(s.points.len(), 2);
    }

    #[test]
    fn duplicate_frequency_reports_line() {
        let err = load_spectrum("f,l\n10,-90\n10,-95\n".as_bytes(), "t").unwrap_err();
        assert_eq!(
            err,
            NoiseError::Parse {
                line: 3,
                reason: "frequency 10 does not increase (previous 10)".into()
            }
        );
        let err = load_spectrum("10,-90\n-1,-95\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, NoiseError::Parse { line: 2, .. }));
        let err = load_spectrum("10,-90\nx,y\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, NoiseError::Parse { line: 2, .. }));
    }

    #[test]
    fn model_round_trips_through_csv() {
        let s = PowerLawModel::dds_like().spectrum(1.0, 1e8, 7).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&s, &mut buf).unwrap();
        let back = load_spectrum(buf.as_slice(), s.label.clone()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn extrapolation_continues_the_lowest_slope() {
        let s = PhaseNoiseSpectrum::new(vec![(4.0, -60.0), (40.0, -80.0)], "t").unwrap();
        let e = extrapolate_low(&s, 0.4, 10).unwrap();
        assert_relative_eq!(e.points[0].0, 0.4);
        assert_relative_eq!(e.points[0].1, -40.0, epsilon = 1e-12);
        assert!(e.points.windows(2).all(|w| w[0].0 < w[1].0));
        let flat = PhaseNoiseSpectrum::new(vec![(4.0, -70.0), (40.0, -70.0)], "t").unwrap();
        assert!(extrapolate_low(&flat, 0.01, 10)
            .unwrap()
            .points
            .iter()
            .all(|p| p.1 == -70.0));
        assert_eq!(extrapolate_low(&s, 5.0, 10).unwrap(), s);
        let single = PhaseNoiseSpectrum::new(vec![(4.0, -60.0)], "t").unwrap();
        assert!(matches!(
            extrapolate_low(&single, 1.0, 10),
            Err(NoiseError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn free_evolution_filter_function_is_closed_form() {
        let tau = 37e-9;
        let ctrl = ControlSegmentList::identity(tau).unwrap();
        for w in [1.0, 1e3, 1e6, 3.3e7, 1e9, 7.7e10] {
            let exact = 4.0 * (0.5 * w * tau).sin().powi(2);
            assert_relative_eq!(filter_function(&ctrl, w), exact, max_relative = 1e-10);
        }
        // Split into segments the result is unchanged.
        let split = ControlSegmentList::new(vec![
            ControlSegment {
                duration: 10e-9,
                rabi: 0.0,
                phase: 0.0,
            },
            ControlSegment {
                duration: 27e-9,
                rabi: 0.0,
                phase: 1.0,
            },
        ])
        .unwrap();
        assert_relative_eq!(
            filter_function(&split, 5e7),
            filter_function(&ctrl, 5e7),
            max_relative = 1e-12
        );
    }

    #[test]
    fn constant_drive_matches_brute_force() {
        let tau = 20e-9;
        let ctrl = ControlSegmentList::x_pi(tau).unwrap();
        for w in [1e5, 1e7, 1.5e8, 1e9] {
            let fast = filter_function(&ctrl, w);
            let slow = brute_force(&ctrl, w, 4000);
            assert_relative_eq!(fast, slow, max_relative = 1e-8);
        }
        let seq = ControlSegmentList::new(vec![
            ControlSegment {
                duration: 10e-9,
                rabi: PI / 20e-9,
                phase: 0.3,
            },
            ControlSegment {
                duration: 5e-9,
                rabi: 0.0,
                phase: 0.0,
            },
            ControlSegment {
                duration: 20e-9,
                rabi: PI / 20e-9,
                phase: -1.2,
            },
        ])
        .unwrap();
        for w in [3e6, 2e8] {
            assert_relative_eq!(
                filter_function(&seq, w),
                brute_force(&seq, w, 4000),
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn filter_function_vanishes_quadratically_at_dc() {
        let ctrl = ControlSegmentList::x_pi(30e-9).unwrap();
        let f1 = filter_function(&ctrl, 1e3);
        let f2 = filter_function(&ctrl, 2e3);
        assert_relative_eq!(f2 / f1, 4.0, max_relative = 1e-6);
    }

    #[test]
    fn white_noise_free_evolution_gives_s0_tau() {
        let s0 = 2.0;
        let psd = DephasingPsd::white(s0, TAU * 0.5, TAU * 2e8).unwrap();
        let tau = 1e-6;
        let r = dephasing_floor(
            &psd,
            &ControlSegmentList::identity(tau).unwrap(),
            &Band::default(),
        )
        .unwrap();
        assert_relative_eq!(r.chi, s0 * tau, max_relative = 2e-3);
    }

    #[test]
    fn zero_psd_gives_zero_infidelity() {
        let psd = DephasingPsd::white(0.0, 1.0, 1e10).unwrap();
        let a = infidelity_floor(
            &psd,
            &ControlSegmentList::x_pi(20e-9).unwrap(),
            &Band::default(),
        )
        .unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn coverage_gap_is_reported() {
        let psd = DephasingPsd::white(1.0, TAU * 10.0, TAU * 1e6).unwrap();
        let err = infidelity_floor(
            &psd,
            &ControlSegmentList::identity(1e-6).unwrap(),
            &Band::default(),
        )
        .unwrap_err();
        match err {
            NoiseError::Coverage(msg) => {
                assert!(msg.contains("1.000000e0"), "{msg}");
                assert!(msg.contains("1.000000e8"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn quadrature_converges() {
        let psd =
            to_dephasing_psd(&PowerLawModel::dds_like().spectrum(1.0, 1e8, 20).unwrap()).unwrap();
        for ctrl in [
            ControlSegmentList::x_pi(25e-9).unwrap(),
            ControlSegmentList::identity(2e-6).unwrap(),
        ] {
            let a = dephasing_floor(&psd, &ctrl, &Band::default()).unwrap().chi;
            let b = dephasing_floor(
                &psd,
                &ctrl,
                &Band {
                    points_per_decade: 400,
                    ..Band::default()
                },
            )
            .unwrap()
            .chi;
            assert!(((a - b) / b).abs() < 1e-3, "{a} {b}");
        }
    }

    #[test]
    fn curves_table_has_one_column_pair_per_source() {
        let sources: Vec<DephasingPsd> =
            [PowerLawModel::dds_like(), PowerLawModel::generator_like()]
                .iter()
                .map(|m| to_dephasing_psd(&m.spectrum(1.0, 1e8, 20).unwrap()).unwrap())
                .collect();
        let band = Band {
            points_per_decade: 50,
            ..Band::default()
        };
        let rows = infidelity_curves(&sources, &[10e-9, 100e-9], &band).unwrap();
        let labels: Vec<String> = sources.iter().map(|s| s.label.clone()).collect();
        let mut buf = Vec::new();
        write_infidelity_csv(&labels, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "gate_length_s,x_pi_dds-like,identity_dds-like,x_pi_generator-like,identity_generator-like");
        assert_eq!(text.lines().count(), 3);
        assert!(rows[1].identity[0] > rows[0].identity[0]);
    }

    proptest! {
        #[test]
        fn filter_function_is_non_negative(
            d1 in 1e-9..1e-6f64, r1 in -1e9..1e9f64, p1 in -3.2..3.2f64,
            d2 in 1e-9..1e-6f64, r2 in -1e9..1e9f64, w in 1.0..1e10f64,
        ) {
            let ctrl = ControlSegmentList::new(vec![
                ControlSegment { duration: d1, rabi: r1, phase: p1 },
                ControlSegment { duration: d2, rabi: r2, phase: 0.0 },
            ]).unwrap();
            prop_assert!(filter_function(&ctrl, w) >= 0.0);
        }

        #[test]
        fn raising_level_never_lowers_psd(f in 1e-1..1e9f64, l in -200.0..0.0f64, dl in 0.0..50.0f64) {
            prop_assert!(dephasing_psd_value(f, l + dl) >= dephasing_psd_value(f, l));
        }
    }
}
