//! Weighted nonlinear least squares for `A·pᵐ + B`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clifford::PRIMITIVES_PER_CLIFFORD;
use crate::error::FitError;

const P_MIN: f64 = 1e-12;
const P_MAX: f64 = 1.0 - 1e-12;
const MAX_ITERATIONS: usize = 500;

/// How the decay asymptote `B` is treated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Asymptote {
    Free,
    Fixed(f64),
}

impl Default for Asymptote {
    fn default() -> Self {
        Asymptote::Fixed(0.5)
    }
}

/// Fitted decay with 1σ uncertainties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub p: f64,
    pub b: f64,
    pub a_sigma: f64,
    pub p_sigma: f64,
    pub b_sigma: f64,
    /// Row-major covariance over `(A, p, B)`; the `B` row and column are zero
    /// when `B` was fixed.
    pub covariance: [[f64; 3]; 3],
    pub chi2_reduced: f64,
    pub iterations: usize,
    /// True when `p` ended on a bound of `(0, 1)`.
    pub at_bound: bool,
}

impl DecayFit {
    pub fn model(&self, m: f64) -> f64 {
        self.a * self.p.powf(m) + self.b
    }

    pub fn epc(&self) -> f64 {
        epc(self.p)
    }

    pub fn epc_sigma(&self) -> f64 {
        0.5 * self.p_sigma
    }

    pub fn epg(&self) -> f64 {
        epg(self.p)
    }

    pub fn epg_sigma(&self) -> f64 {
        let n = PRIMITIVES_PER_CLIFFORD;
        0.5 / n * self.p.powf(1.0 / n - 1.0) * self.p_sigma
    }
}

/// Error per Clifford `½(1 − p)`.
pub fn epc(p: f64) -> f64 {
    0.5 * (1.0 - p)
}

/// Error per primitive gate `½(1 − p^{1/N_g})`.
pub fn epg(p: f64) -> f64 {
    0.5 * (1.0 - p.powf(1.0 / PRIMITIVES_PER_CLIFFORD))
}

struct Problem<'a> {
    m: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
    fixed_b: Option<f64>,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        if self.fixed_b.is_some() {
            2
        } else {
            3
        }
    }

    fn unpack(&self, theta: &[f64]) -> (f64, f64, f64) {
        (theta[0], theta[1], self.fixed_b.unwrap_or_else(|| theta[2]))
    }

    fn clamp(&self, theta: &mut [f64]) {
        theta[1] = theta[1].clamp(P_MIN, P_MAX);
        if self.fixed_b.is_none() {
            theta[2] = theta[2].clamp(0.0, 1.0);
        }
    }

    fn chi2(&self, theta: &[f64]) -> f64 {
        let (a, p, b) = self.unpack(theta);
        self.m
            .iter()
            .zip(self.y)
            .zip(&self.w)
            .map(|((&m, &y), &w)| {
                let r = y - (a * p.powf(m) + b);
                w * r * r
            })
            .sum()
    }

    /// Normal matrix `JᵀWJ` and gradient `JᵀWr`.
    fn normal(&self, theta: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.n_params();
        let (a, p, b) = self.unpack(theta);
        let mut jtj = DMatrix::zeros(k, k);
        let mut jtr = DVector::zeros(k);
        for ((&m, &y), &w) in self.m.iter().zip(self.y).zip(&self.w) {
            let pm = p.powf(m);
            let r = y - (a * pm + b);
            let row = [
                pm,
                if m == 0.0 {
                    0.0
                } else {
                    a * m * p.powf(m - 1.0)
                },
                1.0,
            ];
            for i in 0..k {
                jtr[i] += w * row[i] * r;
                for j in 0..k {
                    jtj[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        (jtj, jtr)
    }
}

/// Fits `A·pᵐ + B` to `survivals` with standard errors `errors`.
pub fn fit_decay(
    lengths: &[f64],
    survivals: &[f64],
    errors: &[f64],
    asymptote: Asymptote,
) -> Result<DecayFit, FitError> {
    let n = lengths.len();
    if survivals.len() != n || errors.len() != n {
        return Err(FitError::Shape(format!(
            "{n} lengths, {} survivals, {} errors",
            survivals.len(),
            errors.len()
        )));
    }
    let mut distinct: Vec<f64> = lengths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(FitError::TooFewPoints {
            needed: 3,
            got: distinct.len(),
        });
    }
    if let Some(bad) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(FitError::Shape(format!(
            "standard error {bad} is not positive"
        )));
    }
    if survivals.iter().chain(lengths).any(|v| !v.is_finite()) {
        return Err(FitError::Shape("non-finite input".into()));
    }

    let fixed_b = match asymptote {
        Asymptote::Free => None,
        Asymptote::Fixed(b) => Some(b),
    };
    let problem = Problem {
        m: lengths,
        y: survivals,
        w: errors.iter().map(|e| 1.0 / (e * e)).collect(),
        fixed_b,
    };
    let k = problem.n_params();

    let first = lengths
        .iter()
        .zip(survivals)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, &y)| y)
        .unwrap_or(1.0);
    let last = lengths
        .iter()
        .zip(survivals)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .map(|(_, &y)| y)
        .unwrap_or(0.5);
    let mut theta = match fixed_b {
        Some(b) => vec![first - b, 0.99],
        None => vec![first - last, 0.99, last.clamp(0.0, 1.0)],
    };
    if theta[0] == 0.0 {
        theta[0] = 1e-3;
    }

    let mut chi2 = problem.chi2(&theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = problem.normal(&theta);
        if jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        while lambda < 1e20 {
            let mut damped = jtj.clone();
            for i in 0..k {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            problem.clamp(&mut trial);
            let trial_chi2 = problem.chi2(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                accepted = Some((trial, trial_chi2));
                lambda = (lambda * 0.1).max(1e-15);
                break;
            }
            lambda *= 10.0;
        }
        match accepted {
            None => {
                converged = true;
                break;
            }
            Some((trial, trial_chi2)) => {
                let step = theta
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / (a.abs() + 1e-12))
                    .fold(0.0, f64::max);
                let gain = chi2 - trial_chi2;
                theta = trial;
                chi2 = trial_chi2;
                if step < 1e-13 || gain <= 1e-15 * chi2 && step < 1e-9 {
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        return Err(FitError::NoConvergence(MAX_ITERATIONS));
    }

    let (jtj, _) = problem.normal(&theta);
    let inv = jtj.try_inverse().ok_or(FitError::Singular)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Singular);
    }
    let dof = n.saturating_sub(k);
    let chi2_reduced = if dof > 0 { chi2 / dof as f64 } else { 1.0 };
    let mut covariance = [[0.0; 3]; 3];
    for i in 0..k {
        for j in 0..k {
            covariance[i][j] = inv[(i, j)] * chi2_reduced;
        }
    }
    let (a, p, b) = problem.unpack(&theta);
    let sd = |i: usize| covariance[i][i].max(0.0).sqrt();
    Ok(DecayFit {
        a,
        p,
        b,
        a_sigma: sd(0),
        p_sigma: sd(1),
        b_sigma: sd(2),
        covariance,
        chi2_reduced,
        iterations,
        at_bound: p <= P_MIN || p >= P_MAX,
    })
}
