//! Dirichlet sections of the Jacobi operator and their functional calculus.

use crate::linalg;
use crate::model::{strip_norm, FrequencyVector, LatticeConfig, QuasiPeriodicPotential};
use crate::{Error, Result};

/// Symmetric tridiagonal matrix with diagonal `P(theta0 + n omega)` and
/// off-diagonal entries `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSection {
    diagonal: Vec<f64>,
    offset: i64,
}

impl FiniteSection {
    /// Section with an explicit diagonal, sites starting at `offset`.
    pub fn from_diagonal(diagonal: Vec<f64>, offset: i64) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::InvalidInput("section needs at least one site".into()));
        }
        if diagonal.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidInput("diagonal entries must be finite".into()));
        }
        Ok(Self { diagonal, offset })
    }

    pub fn n_sites(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// `(H + shift) v`.
    pub fn apply_shifted(&self, v: &[f64], shift: f64) -> Vec<f64> {
        let n = self.diagonal.len();
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| {
                let left = if i > 0 { v[i - 1] } else { 0.0 };
                let right = if i + 1 < n { v[i + 1] } else { 0.0 };
                (self.diagonal[i] + shift) * v[i] - left - right
            })
            .collect()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_shifted(v, 0.0)
    }
}

pub fn build_finite_section(
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    config: &LatticeConfig,
) -> Result<FiniteSection> {
    let diagonal = p.eval_orbit(omega, config.theta0(), config.offset(), config.n_sites())?;
    let eps0 = strip_norm(p);
    debug_assert!(diagonal.iter().all(|d| d.abs() <= eps0 * (1.0 + 1e-12) + 1e-300));
    FiniteSection::from_diagonal(diagonal, config.offset())
}

/// Full spectral data `H = Q diag(values) Q^T` of a finite section.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    values: Vec<f64>,
    // column-major, column k is the k-th eigenvector
    vectors: Vec<f64>,
    n: usize,
}

impl EigenDecomposition {
    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.n..(k + 1) * self.n]
    }

    /// Column-major `N x N` eigenvector matrix.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    /// `Q^T v`.
    pub fn to_spectral(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        linalg::gemv(true, self.n, self.n, &self.vectors, v, &mut out);
        out
    }

    /// `Q c`.
    pub fn from_spectral(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        linalg::gemv(false, self.n, self.n, &self.vectors, c, &mut out);
        out
    }

    /// `Q C` for a column-major `N x k` block.
    pub fn from_spectral_block(&self, c: &[f64], k: usize) -> Vec<f64> {
        linalg::gemm_square(false, self.n, &self.vectors, c, k)
    }

    /// `Q^T B` for a column-major `N x k` block.
    pub fn to_spectral_block(&self, b: &[f64], k: usize) -> Vec<f64> {
        linalg::gemm_square(true, self.n, &self.vectors, b, k)
    }

    /// `f(H) v`.
    pub fn apply_function<F: Fn(f64) -> f64>(&self, f: F, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        let mut c = self.to_spectral(v);
        for (ck, &e) in c.iter_mut().zip(&self.values) {
            let fe = f(e);
            if !fe.is_finite() {
                return Err(Error::NonFiniteFunction { eigenvalue: e });
            }
            *ck *= fe;
        }
        Ok(self.from_spectral(&c))
    }

    /// `max |H - Q diag Q^T|`, computed entrywise.
    pub fn reconstruction_defect(&self, h: &FiniteSection) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i.saturating_sub(2)..n.min(i + 3) {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.vectors[k * n + i] * self.values[k] * self.vectors[k * n + j];
                }
                let target = if i == j {
                    h.diagonal[i]
                } else if i.abs_diff(j) == 1 {
                    -1.0
                } else {
                    0.0
                };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// `max |Q^T Q - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = linalg::gemm_square(true, self.n, &self.vectors, &self.vectors, self.n);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let t = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[i * self.n + j] - t).abs());
            }
        }
        worst
    }
}

/// Eigenvalues ascending; each eigenvector has its first entry above
/// `1e-8 * max|entry|` made positive.
pub fn eigendecompose(h: &FiniteSection) -> Result<EigenDecomposition> {
    let n = h.n_sites();
    let off = vec![-1.0; n - 1];
    let (values, mut vectors) = linalg::tridiagonal_eigen(&h.diagonal, &off)?;
    for k in 0..n {
        let col = &mut vectors[k * n..(k + 1) * n];
        let big = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-8 * big) {
            if *first < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    Ok(EigenDecomposition { values, vectors, n })
}

pub fn apply_function<F: Fn(f64) -> f64>(
    f: F,
    d: &EigenDecomposition,
    v: &[f64],
) -> Result<Vec<f64>> {
    d.apply_function(f, v)
}
