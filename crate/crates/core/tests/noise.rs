use std::f64::consts::{PI, TAU};

use ddsq::noise::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Sample mean and standard error of the mean.
fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Phase accumulated by white frequency noise with unilateral PSD `s0`,
/// integrated step by step in the time domain.
fn white_trajectory_phase(s0: f64, tau: f64, steps: usize, rng: &mut ChaCha8Rng) -> f64 {
    let dt = tau / steps as f64;
    let sd = (s0 / dt).sqrt();
    (0..steps)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            sd * x * dt
        })
        .sum()
}

/// Phase accumulated over `tau` by a random-phase spectral synthesis of
/// `psd` on the comb `(ω, Δω)`.
fn synthesized_phase(
    psd: &DephasingPsd,
    tau: f64,
    comb: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> f64 {
    comb.iter()
        .map(|&(w, dw)| {
            let amp = (psd.at(w).unwrap() * dw / PI).sqrt();
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            amp * (a * (w * tau).sin() + b * (1.0 - (w * tau).cos())) / w
        })
        .sum()
}

#[test]
fn white_noise_chi_matches_time_domain_monte_carlo() {
    let s0 = 4e3;
    let tau = 2e-6;
    let psd = DephasingPsd::white(s0, TAU * 0.1, TAU * 1e9).unwrap();
    let chi = dephasing_floor(
        &psd,
        &ControlSegmentList::identity(tau).unwrap(),
        &Band::default(),
    )
    .unwrap()
    .chi;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let squares: Vec<f64> = (0..4000)
        .map(|_| white_trajectory_phase(s0, tau, 200, &mut rng).powi(2))
        .collect();
    let (var, sem) = mean_sem(&squares);
    assert!((chi - var).abs() < 3.0 * sem, "chi {chi} vs {var} ± {sem}");
    assert!((chi - s0 * tau).abs() / (s0 * tau) < 2e-3);
}

#[test]
fn colored_noise_chi_matches_spectral_monte_carlo() {
    let tau = 1e-6;
    let model = PowerLawModel {
        label: "test".into(),
        h: [0.0, 0.0, 1e-4, 1.0],
    };
    let psd = to_dephasing_psd(&model.spectrum(1e3, 1e8, 20).unwrap()).unwrap();
    let band = Band {
        f_min_hz: 1e3,
        f_max_hz: 1e8,
        points_per_decade: 200,
    };
    let chi = dephasing_floor(&psd, &ControlSegmentList::identity(tau).unwrap(), &band)
        .unwrap()
        .chi;
    let (lo, hi) = (TAU * 1e3, TAU * 1e8);
    let n = 10_000;
    let comb: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let edge = |j: f64| lo * (hi / lo).powf(j / n as f64);
            let (a, b) = (edge(k as f64), edge(k as f64 + 1.0));
            ((a * b).sqrt(), b - a)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let squares: Vec<f64> = (0..1000)
        .map(|_| synthesized_phase(&psd, tau, &comb, &mut rng).powi(2))
        .collect();
    let (var, sem) = mean_sem(&squares);
    assert!((chi - var).abs() < 3.0 * sem, "chi {chi} vs {var} ± {sem}");
}

#[test]
fn csv_extrapolation_and_floor_pipeline() {
    let csv = "freq_hz,dbc_per_hz\n4,-60\n40,-80\n400,-95\n1e4,-110\n1e6,-140\n1e8,-150\n";
    let measured = load_spectrum(csv.as_bytes(), "measured").unwrap();
    let psd = to_dephasing_psd(&measured).unwrap();
    let short = infidelity_floor(
        &psd,
        &ControlSegmentList::x_pi(20e-9).unwrap(),
        &Band::default(),
    );
    assert!(matches!(short, Err(ddsq::error::NoiseError::Coverage(_))));

    let extended = extrapolate_low(&measured, 1.0, 10).unwrap();
    assert_eq!(extended.points[0].0, 1.0);
    assert!((extended.points[0].1 - (-60.0 + 20.0 * 4f64.log10())).abs() < 1e-12);
    let psd = to_dephasing_psd(&extended).unwrap();
    let report = dephasing_floor(
        &psd,
        &ControlSegmentList::x_pi(20e-9).unwrap(),
        &Band::default(),
    )
    .unwrap();
    assert!(
        report.infidelity > 0.0 && report.infidelity < 1e-4,
        "{report:?}"
    );
    assert!(report.high_decade_fraction > report.low_decade_fraction);
}

#[test]
fn source_difference_shrinks_for_short_gates() {
    let sources: Vec<DephasingPsd> = [PowerLawModel::dds_like(), PowerLawModel::generator_like()]
        .iter()
        .map(|m| to_dephasing_psd(&m.spectrum(1.0, 1e8, 20).unwrap()).unwrap())
        .collect();
    let short = [10e-9, 20e-9, 30e-9];
    let long = [1e-6, 10e-6];
    let rows = infidelity_curves(
        &sources,
        &[short.as_slice(), long.as_slice()].concat(),
        &Band::default(),
    )
    .unwrap();
    let diff = |r: &InfidelityRow| (r.x_pi[0] - r.x_pi[1]).abs();
    let worst_short = rows[..3].iter().map(diff).fold(0.0, f64::max);
    let best_long = rows[3..].iter().map(diff).fold(f64::INFINITY, f64::min);
    assert!(worst_short < best_long, "{worst_short} vs {best_long}");
    for r in &rows {
        assert!(r.x_pi[0] >= r.x_pi[1] && r.identity[0] >= r.identity[1]);
        assert!(r.x_pi[0] < 1e-5, "{r:?}");
    }
}
