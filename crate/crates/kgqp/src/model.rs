//! Frequency vectors, quasi-periodic potentials and lattice geometry.
//!
//! Torus points are stored as reals in `[0, 1)` per component and every
//! Fourier mode is `exp(2 pi i <k, theta>)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::{Error, Result};

/// Rotation vector `omega` together with its Diophantine constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    omega: Vec<f64>,
    gamma: f64,
    tau: f64,
}

impl FrequencyVector {
    pub fn new(omega: Vec<f64>, gamma: f64, tau: f64) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidInput("frequency vector is empty".into()));
        }
        if omega.iter().any(|w| !(0.0..1.0).contains(w)) {
            return Err(Error::InvalidInput(format!(
                "frequency components must lie in [0, 1): {omega:?}"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
        }
        let d = omega.len() as f64;
        if !(tau > d - 1.0) {
            return Err(Error::InvalidInput(format!("tau must exceed d - 1, got {tau}")));
        }
        Ok(Self { omega, gamma, tau })
    }

    /// The golden mean `(sqrt(5) - 1) / 2` with `gamma = 1/4`, `tau = 3/2`.
    pub fn golden() -> Self {
        Self {
            omega: vec![(5f64.sqrt() - 1.0) / 2.0],
            gamma: 0.25,
            tau: 1.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dot(&self, k: &[i64]) -> f64 {
        k.iter().zip(&self.omega).map(|(&k, w)| k as f64 * w).sum()
    }

    /// Torus point `theta0 + n omega`, reduced mod 1.
    pub fn orbit_point(&self, theta0: &[f64], n: i64) -> Vec<f64> {
        theta0
            .iter()
            .zip(&self.omega)
            .map(|(t, w)| (t + n as f64 * w).rem_euclid(1.0))
            .collect()
    }
}

/// Distance from `x` to the nearest integer.
pub fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Sum of absolute values of the components.
pub fn l1_norm(k: &[i64]) -> i64 {
    k.iter().map(|c| c.abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiophantineReport {
    pub worst_n: Vec<i64>,
    pub worst_margin: f64,
    pub pass: bool,
}

/// Scans every nonzero `n` with `|n|_inf <= k_max` (one representative of each
/// `+-n` pair) and reports the smallest `||<n, omega>|| |n|^tau`.
///
/// Ties go to the smallest `|n|_1`, then to the first vector in lexicographic
/// order.
pub fn check_diophantine(omega: &FrequencyVector, k_max: u32) -> DiophantineReport {
    let d = omega.dim();
    let k = k_max as i64;
    let mut best: Option<(f64, i64, Vec<i64>)> = None;
    let mut n = vec![-k; d];
    loop {
        if is_positive_half(&n) {
            let norm = l1_norm(&n);
            let margin = dist_to_integer(omega.dot(&n)) * (norm as f64).powf(omega.tau);
            let better = match &best {
                None => true,
                Some((m, bn, bv)) => {
                    margin < *m || (margin == *m && (norm < *bn || (norm == *bn && n < *bv)))
                }
            };
            if better {
                best = Some((margin, norm, n.clone()));
            }
        }
        if !advance(&mut n, -k, k) {
            break;
        }
    }
    let (worst_margin, _, worst_n) = best.unwrap_or((f64::INFINITY, 0, vec![0; d]));
    DiophantineReport {
        pass: worst_margin >= omega.gamma,
        worst_n,
        worst_margin,
    }
}

/// First nonzero component positive.
pub(crate) fn is_positive_half(n: &[i64]) -> bool {
    n.iter().find(|&&c| c != 0).map_or(false, |&c| c > 0)
}

/// Odometer increment over the box `[lo, hi]^d`; false once it wraps.
pub(crate) fn advance(n: &mut [i64], lo: i64, hi: i64) -> bool {
    for c in n.iter_mut().rev() {
        if *c < hi {
            *c += 1;
            return true;
        }
        *c = lo;
    }
    false
}

/// Finite real Fourier series `P(theta) = sum_k p_k exp(2 pi i <k, theta>)`
/// with `p_{-k} = p_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPeriodicPotential {
    d: usize,
    radius: f64,
    coeffs: BTreeMap<Vec<i64>, f64>,
    // (k, p_k) with every mode listed once; the cosine form doubles nonzero modes.
    terms: Vec<(Vec<i64>, f64)>,
}

impl QuasiPeriodicPotential {
    pub fn new<I>(d: usize, radius: f64, coeffs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i64>, f64)>,
    {
        if d == 0 {
            return Err(Error::InvalidInput("torus dimension must be positive".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
        }
        let mut map = BTreeMap::new();
        for (k, p) in coeffs {
            if k.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: k.len() });
            }
            if !p.is_finite() {
                return Err(Error::InvalidInput(format!("coefficient at {k:?} is not finite")));
            }
            if p != 0.0 {
                *map.entry(k).or_insert(0.0) += p;
            }
        }
        for (k, &p) in &map {
            let neg: Vec<i64> = k.iter().map(|c| -c).collect();
            let q = map.get(&neg).copied().unwrap_or(0.0);
            if (p - q).abs() > 1e-14 * p.abs().max(q.abs()) {
                return Err(Error::InvalidInput(format!(
                    "coefficients at {k:?} and {neg:?} differ ({p} vs {q})"
                )));
            }
        }
        let terms = map
            .iter()
            .filter(|(k, _)| k.iter().all(|&c| c == 0) || is_positive_half(k))
            .map(|(k, &p)| {
                let w = if k.iter().all(|&c| c == 0) { p } else { 2.0 * p };
                (k.clone(), w)
            })
            .collect();
        Ok(Self { d, radius, coeffs: map, terms })
    }

    pub fn zero(d: usize) -> Self {
        Self::new(d, 1.0, std::iter::empty()).expect("zero potential")
    }

    /// `amplitude * cos(2 pi theta_1)`, i.e. coefficients `amplitude / 2` at `+-e_1`.
    pub fn cosine(d: usize, amplitude: f64, radius: f64) -> Result<Self> {
        let mut e1 = vec![0; d.max(1)];
        e1[0] = 1;
        let m1: Vec<i64> = e1.iter().map(|c| -c).collect();
        Self::new(d, radius, [(e1, amplitude / 2.0), (m1, amplitude / 2.0)])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<i64>, f64> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.d, radius, self.coeffs.clone())
    }

    /// `P(theta)`, real by construction.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: theta.len() });
        }
        Ok(self.eval_unchecked(theta))
    }

    pub(crate) fn eval_unchecked(&self, theta: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, w)| {
                let phase: f64 = k
                    .iter()
                    .zip(theta)
                    .map(|(&k, t)| k as f64 * t.rem_euclid(1.0))
                    .sum();
                w * (2.0 * PI * phase.rem_euclid(1.0)).cos()
            })
            .sum()
    }

    /// `P` sampled along `theta0 + n omega` for `n` in `first .. first + len`.
    pub fn eval_orbit(
        &self,
        omega: &FrequencyVector,
        theta0: &[f64],
        first: i64,
        len: usize,
    ) -> Result<Vec<f64>> {
        if omega.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: omega.dim() });
        }
        if theta0.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: theta0.len() });
        }
        Ok((0..len as i64)
            .map(|j| self.eval_unchecked(&omega.orbit_point(theta0, first + j)))
            .collect())
    }
}

/// `V(theta) = 1 + P(theta)`.
pub fn eval_potential(p: &QuasiPeriodicPotential, theta: &[f64]) -> Result<f64> {
    Ok(1.0 + p.eval(theta)?)
}

/// `sum_k |p_k| exp(2 pi |k|_1 r)`, an upper bound for the sup of `|P|` on the
/// strip `|Im theta| <= r`.
pub fn strip_norm(p: &QuasiPeriodicPotential) -> f64 {
    p.coeffs
        .iter()
        .map(|(k, c)| c.abs() * (2.0 * PI * l1_norm(k) as f64 * p.radius).exp())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    n_sites: usize,
    theta0: Vec<f64>,
    offset: i64,
}

impl LatticeConfig {
    /// Dirichlet window centred on the origin: sites `-N/2 .. N - N/2 - 1`.
    pub fn new(n_sites: usize, theta0: Vec<f64>) -> Result<Self> {
        let offset = -((n_sites / 2) as i64);
        Self::with_offset(n_sites, theta0, offset)
    }

    pub fn with_offset(n_sites: usize, theta0: Vec<f64>, offset: i64) -> Result<Self> {
        if n_sites < 3 {
            return Err(Error::InvalidInput(format!("need at least 3 sites, got {n_sites}")));
        }
        if theta0.is_empty() || theta0.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("theta0 must be a finite torus point".into()));
        }
        let theta0 = theta0.into_iter().map(|t| t.rem_euclid(1.0)).collect();
        Ok(Self { n_sites, theta0, offset })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// Array index of lattice site `n`, if inside the window.
    pub fn index_of(&self, n: i64) -> Option<usize> {
        let j = n - self.offset;
        (0..self.n_sites as i64).contains(&j).then_some(j as usize)
    }

    pub fn site_of(&self, index: usize) -> i64 {
        self.offset + index as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_potential_is_one() {
        let p = QuasiPeriodicPotential::zero(1);
        assert_eq!(eval_potential(&p, &[0.37]).unwrap(), 1.0);
    }

    #[test]
    fn cosine_at_origin() {
        let eps = 1e-3;
        let p = QuasiPeriodicPotential::new(1, 0.1, [(vec![1], eps), (vec![-1], eps)]).unwrap();
        assert!((eval_potential(&p, &[0.0]).unwrap() - 1.002).abs() < 1e-15);
    }

    #[test]
    fn two_mode_matches_termwise_sum() {
        let eps = 1e-3;
        let modes = [(1i64, eps), (-1, eps), (2, eps / 2.0), (-2, eps / 2.0)];
        let p = QuasiPeriodicPotential::new(1, 0.1, modes.iter().map(|&(k, c)| (vec![k], c)))
            .unwrap();
        let theta = 0.25;
        // complex exponential sum, term by term
        let (mut re, mut im) = (0.0, 0.0);
        for &(k, c) in &modes {
            let a = 2.0 * PI * k as f64 * theta;
            re += c * a.cos();
            im += c * a.sin();
        }
        assert!(im.abs() < 1e-18);
        assert!((eval_potential(&p, &[theta]).unwrap() - (1.0 + re)).abs() < 1e-15);
        // cos(pi/2) = 0, cos(pi) = -1
        assert!((re + eps).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let p = QuasiPeriodicPotential::cosine(2, 1e-3, 0.1).unwrap();
        assert!(matches!(
            eval_potential(&p, &[0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn asymmetric_coefficients_rejected() {
        let r = QuasiPeriodicPotential::new(1, 0.1, [(vec![1], 1e-3), (vec![-1], 2e-3)]);
        assert!(r.is_err());
    }

    #[test]
    fn strip_norm_examples() {
        assert_eq!(strip_norm(&QuasiPeriodicPotential::zero(1)), 0.0);
        let eps = 1e-3;
        let p = QuasiPeriodicPotential::cosine(1, eps, 1e-12).unwrap();
        assert!((strip_norm(&p) - eps).abs() < 1e-12);
        let p = QuasiPeriodicPotential::new(1, 0.1, [(vec![1], 5e-4), (vec![-1], 5e-4)]).unwrap();
        let expected = 2.0 * 5e-4 * (0.2 * PI).exp();
        assert!((strip_norm(&p) - expected).abs() < 1e-15);
        assert!((strip_norm(&p) - 1.874e-3).abs() < 1e-6);
    }

    #[test]
    fn diophantine_rational_half() {
        let w = FrequencyVector::new(vec![0.5], 0.1, 2.0).unwrap();
        let r = check_diophantine(&w, 4);
        assert!(!r.pass);
        assert_eq!(r.worst_n, vec![2]);
        assert_eq!(r.worst_margin, 0.0);
    }

    fn brute_min_margin(w: &[f64], tau: f64, k: i64) -> f64 {
        let mut best = f64::INFINITY;
        if w.len() == 1 {
            for n in 1..=k {
                let x = n as f64 * w[0];
                let m = (x - x.round()).abs() * (n as f64).powf(tau);
                best = best.min(m);
            }
        } else {
            for a in -k..=k {
                for b in -k..=k {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let x = a as f64 * w[0] + b as f64 * w[1];
                    let norm = (a.abs() + b.abs()) as f64;
                    best = best.min((x - x.round()).abs() * norm.powf(tau));
                }
            }
        }
        best
    }

    #[test]
    fn diophantine_golden() {
        let w = FrequencyVector::new(vec![(5f64.sqrt() - 1.0) / 2.0], 0.25, 1.2).unwrap();
        let r = check_diophantine(&w, 10_000);
        let brute = brute_min_margin(w.omega(), 1.2, 10_000);
        assert!(brute >= 0.25);
        assert!(r.pass);
        assert_eq!(r.worst_margin, brute);
    }

    #[test]
    fn diophantine_two_dimensional() {
        let w = FrequencyVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0], 0.05, 2.5)
            .unwrap();
        let r = check_diophantine(&w, 200);
        let brute = brute_min_margin(w.omega(), 2.5, 200);
        assert!((r.worst_margin - brute).abs() <= 1e-12 * brute.max(1e-300));
        assert_eq!(r.pass, brute >= 0.05);
    }

    #[test]
    fn rationals_always_fail() {
        for q in 2..12u32 {
            for p in 1..q {
                let w = FrequencyVector::new(vec![p as f64 / q as f64], 1e-6, 1.0).unwrap();
                assert!(!check_diophantine(&w, q).pass, "{p}/{q}");
            }
        }
    }

    #[test]
    fn potential_real_and_bounded_on_random_sample() {
        let p = QuasiPeriodicPotential::new(
            2,
            0.05,
            [
                (vec![1, 0], 3e-3),
                (vec![-1, 0], 3e-3),
                (vec![1, -2], -1e-3),
                (vec![-1, 2], -1e-3),
                (vec![0, 0], 5e-4),
            ],
        )
        .unwrap();
        let lower = 1.0 - strip_norm(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let th = [rng.gen::<f64>(), rng.gen::<f64>()];
            let v = eval_potential(&p, &th).unwrap();
            assert!(v.is_finite());
            assert!(v >= lower);
        }
    }

    #[test]
    fn lattice_window() {
        let c = LatticeConfig::new(5, vec![0.0]).unwrap();
        assert_eq!(c.offset(), -2);
        assert_eq!(c.index_of(0), Some(2));
        assert_eq!(c.index_of(3), None);
        assert!(LatticeConfig::new(2, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn strip_norm_monotone_in_radius(
            c1 in -1e-2f64..1e-2, c2 in -1e-2f64..1e-2,
            r1 in 1e-4f64..0.5, dr in 0.0f64..0.5,
        ) {
            let modes = [(vec![1], c1), (vec![-1], c1), (vec![3], c2), (vec![-3], c2)];
            let p1 = QuasiPeriodicPotential::new(1, r1, modes.clone()).unwrap();
            let p2 = QuasiPeriodicPotential::new(1, r1 + dr, modes).unwrap();
            prop_assert!(strip_norm(&p1) <= strip_norm(&p2));
        }

        #[test]
        fn orbit_points_reduced(n in -10_000_000i64..10_000_000, t in 0.0f64..1.0) {
            let w = FrequencyVector::golden();
            let th = w.orbit_point(&[t], n);
            prop_assert!((0.0..1.0).contains(&th[0]));
        }
    }
}
