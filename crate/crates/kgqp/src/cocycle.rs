//! The Schrodinger cocycle `(omega, A_E + F(theta))` on `T^d x R^2`.
//!
//! Solutions of `-(x_{n+1} + x_{n-1}) + P(theta + n omega) x_n = E x_n` obey
//! `(x_{n+1}, x_n) = A(theta + n omega) (x_n, x_{n-1})` with
//! `A(theta) = [[P(theta) - E, -1], [1, 0]]`.

use serde::Serialize;

pub use crate::linalg::Mat2;
use crate::linalg::{self, polar_angle};
use crate::model::{FrequencyVector, QuasiPeriodicPotential};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferMatrix(pub Mat2);

impl TransferMatrix {
    pub fn det(&self) -> f64 {
        linalg::det(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }
}

pub fn transfer_matrix(e: f64, p: &QuasiPeriodicPotential, theta: &[f64]) -> Result<TransferMatrix> {
    Ok(TransferMatrix([[p.eval(theta)? - e, -1.0], [1.0, 0.0]]))
}

/// Matrix product stored as `exp(log_scale) * matrix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitProduct {
    pub matrix: Mat2,
    pub log_scale: f64,
}

impl OrbitProduct {
    /// Unscaled product; overflows for long hyperbolic orbits.
    pub fn value(&self) -> Mat2 {
        linalg::scale(&self.matrix, self.log_scale.exp())
    }

    /// `log` of the operator norm of the product.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + spectral_norm(&self.matrix).ln()
    }
}

/// Largest singular value of a 2x2 matrix.
pub fn spectral_norm(a: &Mat2) -> f64 {
    let f2 = a.iter().flatten().map(|x| x * x).sum::<f64>();
    let d = linalg::det(a);
    (0.5 * (f2 + (f2 * f2 - 4.0 * d * d).max(0.0).sqrt())).sqrt()
}

const RENORMALIZE_EVERY: usize = 32;

fn check_dims(p: &QuasiPeriodicPotential, omega: &FrequencyVector, theta0: &[f64]) -> Result<()> {
    if omega.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: omega.dim() });
    }
    if theta0.len() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: theta0.len() });
    }
    Ok(())
}

/// `A(theta0 + (n-1) omega) ... A(theta0)`, renormalized every 32 factors.
pub fn iterate(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    theta0: &[f64],
    n: usize,
) -> Result<OrbitProduct> {
    check_dims(p, omega, theta0)?;
    iterate_with(|th| [[p.eval_unchecked(th) - e, -1.0], [1.0, 0.0]], omega, theta0, n)
}

/// Product along the orbit for an arbitrary matrix-valued function on the torus.
pub fn iterate_with<F: Fn(&[f64]) -> Mat2>(
    a: F,
    omega: &FrequencyVector,
    theta0: &[f64],
    n: usize,
) -> Result<OrbitProduct> {
    let mut m = linalg::IDENTITY;
    let mut log_scale = 0.0;
    for j in 0..n {
        let th = omega.orbit_point(theta0, j as i64);
        m = linalg::mul(&a(&th), &m);
        if (j + 1) % RENORMALIZE_EVERY == 0 {
            let s = spectral_norm(&m);
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Numerical(format!("orbit product degenerated at step {j}")));
            }
            m = linalg::scale(&m, 1.0 / s);
            log_scale += s.ln();
        }
    }
    Ok(OrbitProduct { matrix: m, log_scale })
}

/// Unwrapped projective angles of the two orbit vectors started at angle 0
/// and `pi / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CocycleOrbit {
    pub energy: f64,
    pub theta0: Vec<f64>,
    pub n_steps: usize,
    pub products: Option<Vec<Mat2>>,
    pub angles: [Vec<f64>; 2],
}

/// Angle increment of `x -> a x` lifted continuously over `SL(2, R)`: the
/// polar rotation angle of `a` plus the principal turn of its positive factor.
fn angle_increment(a: &Mat2, x: [f64; 2]) -> (f64, [f64; 2]) {
    let alpha = polar_angle(a);
    let y = [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
    let (s, c) = alpha.sin_cos();
    // R(-alpha) y
    let z = [c * y[0] + s * y[1], -s * y[0] + c * y[1]];
    let delta = (x[0] * z[1] - x[1] * z[0]).atan2(x[0] * z[0] + x[1] * z[1]);
    let norm = (y[0] * y[0] + y[1] * y[1]).sqrt();
    (alpha + delta, [y[0] / norm, y[1] / norm])
}

pub fn orbit(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    theta0: &[f64],
    n: usize,
    store_products: bool,
) -> Result<CocycleOrbit> {
    check_dims(p, omega, theta0)?;
    let mut xs = [[1.0, 0.0], [0.0, 1.0]];
    let mut lifts = [0.0, 0.0];
    let mut angles = [Vec::with_capacity(n + 1), Vec::with_capacity(n + 1)];
    angles[0].push(0.0);
    angles[1].push(std::f64::consts::FRAC_PI_2);
    let mut products = store_products.then(|| vec![linalg::IDENTITY]);
    let mut m = linalg::IDENTITY;
    for j in 0..n {
        let th = omega.orbit_point(theta0, j as i64);
        let a = [[p.eval_unchecked(&th) - e, -1.0], [1.0, 0.0]];
        for v in 0..2 {
            let (d, y) = angle_increment(&a, xs[v]);
            lifts[v] += d;
            xs[v] = y;
            angles[v].push(lifts[v] + if v == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 });
        }
        if let Some(ps) = products.as_mut() {
            m = linalg::mul(&a, &m);
            ps.push(m);
        }
    }
    Ok(CocycleOrbit { energy: e, theta0: theta0.to_vec(), n_steps: n, products, angles })
}

/// Fibered rotation number in `[0, pi]` of a general `SL(2, R)` cocycle
/// homotopic to the Schrodinger family, from the mean angle increment of two
/// orthogonal start vectors.
pub fn rotation_number_with<F: Fn(&[f64]) -> Mat2>(
    a: F,
    omega: &FrequencyVector,
    theta0: &[f64],
    n_iter: usize,
) -> Result<f64> {
    if n_iter == 0 {
        return Err(Error::InvalidInput("need at least one iterate".into()));
    }
    let mut xs = [[1.0, 0.0], [0.0, 1.0]];
    let mut total = 0.0;
    for j in 0..n_iter {
        let m = a(&omega.orbit_point(theta0, j as i64));
        for x in xs.iter_mut() {
            let (d, y) = angle_increment(&m, *x);
            total += d;
            *x = y;
        }
    }
    Ok((total / (2.0 * n_iter as f64)).clamp(0.0, std::f64::consts::PI))
}

pub fn rotation_number(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    theta0: &[f64],
    n_iter: usize,
) -> Result<f64> {
    check_dims(p, omega, theta0)?;
    rotation_number_with(|th| [[p.eval_unchecked(th) - e, -1.0], [1.0, 0.0]], omega, theta0, n_iter)
}

/// Rotation number averaged over several starting phases.
pub fn rotation_number_averaged(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    theta0s: &[Vec<f64>],
    n_iter: usize,
) -> Result<f64> {
    if theta0s.is_empty() {
        return Err(Error::InvalidInput("need at least one starting phase".into()));
    }
    let mut s = 0.0;
    for th in theta0s {
        s += rotation_number(e, p, omega, th, n_iter)?;
    }
    Ok(s / theta0s.len() as f64)
}

/// `(1/n) log ||A_n||`, clamped at zero.
pub fn lyapunov_exponent(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    theta0: &[f64],
    n_iter: usize,
) -> Result<f64> {
    if n_iter == 0 {
        return Err(Error::InvalidInput("need at least one iterate".into()));
    }
    let prod = iterate(e, p, omega, theta0, n_iter)?;
    Ok((prod.log_norm() / n_iter as f64).max(0.0))
}
