//! Small complex matrix helpers.

use nalgebra::{Matrix2, Matrix3};
use num_complex::Complex64;

pub type C2 = Matrix2<Complex64>;
pub type C3 = Matrix3<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Max-column-sum norm.
pub fn norm1_3(m: &C3) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(-i·h·dt)` for a Hermitian 3×3 `h`, by scaling and squaring with a
/// degree-14 Taylor polynomial. Slow reference for [`expm_hermitian`].
pub fn expm_hermitian_taylor(h: &C3, dt: f64) -> C3 {
    let a = h * c(0.0, -dt);
    let norm = norm1_3(&a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let a = a / Complex64::from(f64::from(2u32.pow(squarings)));
    let mut result = C3::identity();
    for k in (1..=14).rev() {
        result = C3::identity() + (a * result) / Complex64::from(k as f64);
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}

/// Eigenvalues of a Hermitian 3×3 matrix in descending order.
pub fn hermitian_eigenvalues(h: &C3) -> [f64; 3] {
    let m = (h[(0, 0)].re + h[(1, 1)].re + h[(2, 2)].re) / 3.0;
    let b = [h[(0, 0)].re - m, h[(1, 1)].re - m, h[(2, 2)].re - m];
    let (h01, h02, h12) = (h[(0, 1)], h[(0, 2)], h[(1, 2)]);
    let off = h01.norm_sqr() + h02.norm_sqr() + h12.norm_sqr();
    let p2 = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2] + 2.0 * off) / 6.0;
    if p2 <= 0.0 {
        return [m, m, m];
    }
    let p = p2.sqrt();
    let det = b[0] * b[1] * b[2] + 2.0 * (h01 * h12 * h02.conj()).re
        - b[0] * h12.norm_sqr()
        - b[1] * h02.norm_sqr()
        - b[2] * h01.norm_sqr();
    let r = (det / (2.0 * p2 * p)).clamp(-1.0, 1.0);
    let (sin, cos) = (r.acos() / 3.0).sin_cos();
    let l1 = m + 2.0 * p * cos;
    let l3 = m + p * (-cos - 3f64.sqrt() * sin);
    let l2 = 3.0 * m - l1 - l3;
    [l1, l2, l3]
}

#[inline]
fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-4 {
        1.0 - y * y / 6.0
    } else {
        y.sin() / y
    }
}

/// `i·F[a, b]` for `F(x) = exp(-i x)`, given `ea = F(a)` and `eb = F(b)`.
#[inline]
fn exp_divided(a: f64, b: f64, ea: Complex64, eb: Complex64) -> Complex64 {
    let d = a - b;
    if d.abs() > 1e-2 {
        (ea - eb) * c(0.0, 1.0) / d
    } else {
        Complex64::from_polar(sinc(0.5 * d), -0.5 * (a + b))
    }
}

/// `exp(-i·h·dt)` for a Hermitian 3×3 `h`, from its eigenvalues via the
/// Newton divided-difference form of the matrix exponential.
pub fn expm_hermitian(h: &C3, dt: f64) -> C3 {
    let [l1, l2, l3] = hermitian_eigenvalues(h);
    let (x0, x2, x1) = (l1 * dt, l2 * dt, l3 * dt);
    let spread = x0 - x1;
    let id = C3::identity();
    if spread < 1e-6 {
        let mean = (x0 + x1 + x2) / 3.0;
        let a = (h * c(0.0, -dt)) + id * c(0.0, mean);
        let poly = id + a + a * a * c(0.5, 0.0) + a * a * a * c(1.0 / 6.0, 0.0);
        return poly * Complex64::from_polar(1.0, -mean);
    }
    let e0 = Complex64::from_polar(1.0, -x0);
    let e1 = Complex64::from_polar(1.0, -x1);
    let e2 = Complex64::from_polar(1.0, -x2);
    let f01 = exp_divided(x0, x1, e0, e1);
    let f012 = (exp_divided(x0, x2, e0, e2) - exp_divided(x2, x1, e2, e1)) * c(0.0, 1.0) / spread;
    let a0 = h - id * c(l1, 0.0);
    let a1 = h - id * c(l3, 0.0);
    let prod = a0 * a1;
    id * e0 + a0 * (f01 * c(0.0, -dt)) + prod * (f012 * c(-dt * dt, 0.0))
}

/// `u · rho · u†` for Hermitian `rho`; the result is exactly Hermitian.
pub fn conjugate_hermitian(u: &C3, rho: &C3) -> C3 {
    let t = u * rho;
    let mut out = C3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let mut acc = ZERO;
            for k in 0..3 {
                acc += t[(i, k)] * u[(j, k)].conj();
            }
            if i == j {
                out[(i, i)] = c(acc.re, 0.0);
            } else {
                out[(i, j)] = acc;
                out[(j, i)] = acc.conj();
            }
        }
    }
    out
}

/// Rotation by `angle` about the equatorial axis at azimuth `phi`:
/// `exp(-i θ/2 (cos φ σx + sin φ σy))`.
pub fn rotation_xy(angle: f64, phi: f64) -> C2 {
    let (s, co) = (0.5 * angle).sin_cos();
    let off = Complex64::from_polar(s, -phi) * c(0.0, -1.0);
    C2::new(c(co, 0.0), off, -off.conj(), c(co, 0.0))
}

/// `exp(-i θ/2 σz)`.
pub fn rotation_z(angle: f64) -> C2 {
    C2::new(
        Complex64::from_polar(1.0, -0.5 * angle),
        ZERO,
        ZERO,
        Complex64::from_polar(1.0, 0.5 * angle),
    )
}

/// Average gate fidelity between two 2×2 unitaries, insensitive to global
/// phase.
pub fn average_gate_fidelity(u: &C2, v: &C2) -> f64 {
    let tr = (u.adjoint() * v).trace().norm_sqr();
    (tr + 2.0) / 6.0
}

/// True when `u = e^{iα} v` for some α.
pub fn equal_up_to_phase(u: &C2, v: &C2, tol: f64) -> bool {
    let tr = (u.adjoint() * v).trace().norm();
    (tr - 2.0).abs() < tol
}
