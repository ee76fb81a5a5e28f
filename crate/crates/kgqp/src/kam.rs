//! KAM reduction of the Schrodinger cocycle to constant coefficients.
//!
//! The cocycle is kept in the form `A e^{f(theta)}` with `A` constant in
//! `SL(2, R)` and `f` a trace-free real matrix function on the torus. A step
//! either conjugates away all Fourier modes of `f` up to the current
//! truncation (the homological equation), or first removes a resonance by the
//! rotation `H_k(theta) = C_A diag(e^{i pi <k, theta>}, e^{-i pi <k, theta>}) C_A^{-1}`.
//!
//! Fourier modes are stored in half units: the key `m` stands for
//! `exp(i pi <m, theta>)`, so maps that live on the doubled torus fit the same
//! type as ordinary ones (which only use even keys).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::linalg::{self, cinv, cmul, exp_sl2, log_sl2, CMat2, Mat2};
use crate::model::{self, FrequencyVector, QuasiPeriodicPotential};
use crate::{Error, Result};

const NOISE_FLOOR: f64 = 1e-13;
const DROP_BELOW: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KamSchedule {
    pub sigma: f64,
    pub eps: Vec<f64>,
    /// `N_j = 4^{j+1} sigma |ln eps_j|`.
    pub n: Vec<f64>,
    /// `max(ceil(N_j), n_min)`.
    pub n_eff: Vec<u32>,
    pub n_min: u32,
    pub j_max: usize,
}

impl KamSchedule {
    pub fn eps(&self, j: usize) -> f64 {
        self.eps[j.min(self.eps.len() - 1)]
    }

    pub fn n_eff(&self, j: usize) -> u32 {
        self.n_eff[j.min(self.n_eff.len() - 1)]
    }
}

/// Schedule with `eps_{j+1} = eps_j^{1 + sigma}` for `j = 0 ..= j_max`.
pub fn make_schedule(eps0: f64, sigma: f64, j_max: usize, n_min: u32) -> Result<KamSchedule> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidInput(format!("eps0 must lie in (0, 1), got {eps0}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let mut eps = vec![eps0];
    for _ in 0..j_max {
        let last = *eps.last().unwrap();
        eps.push(last.powf(1.0 + sigma));
    }
    let n: Vec<f64> = eps
        .iter()
        .enumerate()
        .map(|(j, e)| 4f64.powi(j as i32 + 1) * sigma * e.ln().abs())
        .collect();
    let n_eff = n
        .iter()
        .map(|&x| (x.ceil().min(u32::MAX as f64) as u32).max(n_min))
        .collect();
    Ok(KamSchedule { sigma, eps, n, n_eff, n_min, j_max })
}

/// Real `gl(2)`-valued trigonometric polynomial on `R^d / 2 Z^d` with
/// coefficients `F_{-m} = conj(F_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMatrixMap {
    d: usize,
    coeffs: BTreeMap<Vec<i64>, CMat2>,
}

fn czero() -> CMat2 {
    [[Complex64::new(0.0, 0.0); 2]; 2]
}

fn cfrob(a: &CMat2) -> f64 {
    a.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn cconj(a: &CMat2) -> CMat2 {
    [[a[0][0].conj(), a[0][1].conj()], [a[1][0].conj(), a[1][1].conj()]]
}

fn half_phase(m: &[i64], theta: &[f64]) -> f64 {
    // exp(i pi <m, theta>) with theta reduced mod 2 first
    let s: f64 = m
        .iter()
        .zip(theta)
        .map(|(&k, t)| k as f64 * t.rem_euclid(2.0))
        .sum();
    PI * s.rem_euclid(2.0)
}

impl TorusMatrixMap {
    pub fn zero(d: usize) -> Self {
        Self { d, coeffs: BTreeMap::new() }
    }

    /// Coefficients keyed in half units; the map must be real.
    pub fn from_coeffs(d: usize, coeffs: BTreeMap<Vec<i64>, CMat2>) -> Result<Self> {
        for (m, c) in &coeffs {
            if m.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.len() });
            }
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            let other = coeffs.get(&neg).copied().unwrap_or_else(czero);
            let gap = cfrob(&linalg_csub(c, &cconj(&other)));
            if gap > 1e-12 * cfrob(c).max(1e-300) {
                return Err(Error::InvalidInput(format!("coefficients at {m:?} break reality")));
            }
        }
        Ok(Self { d, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<i64>, CMat2> {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, theta: &[f64]) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for (m, c) in &self.coeffs {
            let z = Complex64::from_polar(1.0, half_phase(m, theta));
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += (c[i][j] * z).re;
                }
            }
        }
        out
    }

    /// `sum_m ||F_m||` with the Frobenius norm of each coefficient.
    pub fn norm(&self) -> f64 {
        self.coeffs.values().map(cfrob).sum()
    }

    pub fn zero_mode(&self) -> Mat2 {
        let key = vec![0; self.d];
        self.coeffs.get(&key).map_or([[0.0; 2]; 2], |c| linalg::real_part(c).0)
    }

    fn max_key(&self) -> i64 {
        self.coeffs
            .keys()
            .flat_map(|m| m.iter().map(|x| x.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Fourier coefficients from samples of `g` on the uniform grid of
    /// `[0, 2)^d` with `m` points per axis.
    pub fn sampled<G: Fn(&[f64]) -> Result<Mat2>>(d: usize, m: usize, g: G) -> Result<Self> {
        let total = m.pow(d as u32);
        let mut data: Vec<[Complex64; 4]> = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        let mut theta = vec![0.0; d];
        for _ in 0..total {
            for (t, &i) in theta.iter_mut().zip(&idx) {
                *t = 2.0 * i as f64 / m as f64;
            }
            let v = g(&theta)?;
            data.push([
                Complex64::new(v[0][0], 0.0),
                Complex64::new(v[0][1], 0.0),
                Complex64::new(v[1][0], 0.0),
                Complex64::new(v[1][1], 0.0),
            ]);
            // first axis fastest
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < m {
                    break;
                }
                idx[a] = 0;
            }
        }
        let twiddle: Vec<Complex64> = (0..m)
            .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / m as f64))
            .collect();
        let mut line = vec![[Complex64::new(0.0, 0.0); 4]; m];
        for axis in 0..d {
            let stride = m.pow(axis as u32);
            for base in 0..total {
                if (base / stride) % m != 0 {
                    continue;
                }
                for (q, slot) in line.iter_mut().enumerate() {
                    let mut acc = [Complex64::new(0.0, 0.0); 4];
                    for j in 0..m {
                        let w = twiddle[(q * j) % m];
                        let x = &data[base + j * stride];
                        for e in 0..4 {
                            acc[e] += w * x[e];
                        }
                    }
                    *slot = acc;
                }
                for (q, v) in line.iter().enumerate() {
                    data[base + q * stride] = *v;
                }
            }
        }
        let scale = 1.0 / total as f64;
        let half = (m / 2) as i64;
        let peak = data.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let floor = DROP_BELOW.max(1e-15 * peak);
        let mut coeffs = BTreeMap::new();
        let mut idx = vec![0usize; d];
        for cell in data.iter() {
            let key: Vec<i64> = idx
                .iter()
                .map(|&q| if (q as i64) < half { q as i64 } else { q as i64 - m as i64 })
                .collect();
            let nyquist = key.iter().any(|&k| k == -half);
            let c = [
                [cell[0] * scale, cell[1] * scale],
                [cell[2] * scale, cell[3] * scale],
            ];
            if !nyquist && cfrob(&c) > floor {
                coeffs.insert(key, c);
            }
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < m {
                    break;
                }
                idx[a] = 0;
            }
        }
        let mut out = Self { d, coeffs };
        out.symmetrize();
        Ok(out)
    }

    /// Replace `F_m` by `(F_m + conj F_{-m}) / 2`; returns the largest change.
    fn symmetrize(&mut self) -> f64 {
        let keys: Vec<Vec<i64>> = self.coeffs.keys().cloned().collect();
        let mut worst = 0.0f64;
        let mut out = BTreeMap::new();
        for m in keys {
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            let a = self.coeffs[&m];
            let b = cconj(&self.coeffs.get(&neg).copied().unwrap_or_else(czero));
            let avg = cscale(&linalg_cadd(&a, &b), 0.5);
            worst = worst.max(cfrob(&linalg_csub(&a, &avg)));
            out.insert(m, avg);
        }
        self.coeffs = out;
        worst
    }
}

fn linalg_cadd(a: &CMat2, b: &CMat2) -> CMat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn linalg_csub(a: &CMat2, b: &CMat2) -> CMat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

fn cscale(a: &CMat2, s: f64) -> CMat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenAngle {
    pub xi: f64,
    pub elliptic: bool,
}

/// `xi = arccos(tr A / 2)` in `[0, pi]` for elliptic `A`; `0` or `pi` otherwise.
pub fn eigen_angle(a: &Mat2) -> Result<EigenAngle> {
    let det = linalg::det(a);
    if (det - 1.0).abs() > 1e-12 * linalg::frobenius(a).powi(2).max(1.0) {
        return Err(Error::NotUnimodular { det });
    }
    let tr = a[0][0] + a[1][1];
    match linalg::signed_angle(a) {
        Some(s) if tr.abs() <= 2.0 => Ok(EigenAngle { xi: s.abs(), elliptic: true }),
        _ => Ok(EigenAngle { xi: if tr > 0.0 { 0.0 } else { PI }, elliptic: false }),
    }
}

/// Distance from `x` to the nearest multiple of `pi`.
pub fn dist_mod_pi(x: f64) -> f64 {
    (x - PI * (x / PI).round()).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Resonance {
    NonResonant,
    Resonant {
        k: Vec<i64>,
        distance: f64,
        threshold: f64,
        /// Number of modes violating the bound; more than one means `omega` is
        /// not Diophantine enough for the chosen `eps`, `sigma` and truncation.
        violations: usize,
    },
}

impl Resonance {
    pub fn is_resonant(&self) -> bool {
        matches!(self, Resonance::Resonant { .. })
    }
}

/// Scan `0 < |k|_1 <= n` for `|xi - pi <k, omega>| mod pi < eps^sigma |k|^-tau`.
pub fn check_resonance(
    xi: f64,
    omega: &FrequencyVector,
    eps: f64,
    sigma: f64,
    tau: f64,
    n: u32,
) -> Resonance {
    let d = omega.dim();
    let bound = eps.powf(sigma);
    let n = n as i64;
    let mut best: Option<(Vec<i64>, f64, f64)> = None;
    let mut violations = 0usize;
    let mut k = vec![-n; d];
    loop {
        let norm = model::l1_norm(&k);
        if norm > 0 && norm <= n {
            let dist = dist_mod_pi(xi - PI * omega.dot(&k));
            let thr = bound * (norm as f64).powf(-tau);
            if dist < thr {
                violations += 1;
                let better = match &best {
                    None => true,
                    Some((bk, bd, _)) => {
                        dist < *bd
                            || (dist == *bd
                                && (norm, &k) < (model::l1_norm(bk), bk))
                    }
                };
                if better {
                    best = Some((k.clone(), dist, thr));
                }
            }
        }
        if !model::advance(&mut k, -n, n) {
            break;
        }
    }
    match best {
        None => Resonance::NonResonant,
        Some((k, distance, threshold)) => Resonance::Resonant { k, distance, threshold, violations },
    }
}

/// One factor of the accumulated conjugacy `Z = Z_1 Z_2 ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum Conjugation {
    Exp(TorusMatrixMap),
    /// `C diag(e^{i pi <k, theta>}, e^{-i pi <k, theta>}) C^{-1}`.
    Rotation { basis: CMat2, k: Vec<i64> },
}

impl Conjugation {
    pub fn eval(&self, theta: &[f64]) -> Mat2 {
        match self {
            Conjugation::Exp(y) => exp_sl2(&y.eval(theta)),
            Conjugation::Rotation { basis, k } => {
                let q = Complex64::from_polar(1.0, half_phase(k, theta));
                rotation_in_basis(basis, q)
            }
        }
    }
}

fn rotation_in_basis(basis: &CMat2, q: Complex64) -> Mat2 {
    let d = [[q, Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), q.conj()]];
    linalg::real_part(&cmul(&cmul(basis, &d), &cinv(basis))).0
}

#[derive(Debug, Clone)]
pub struct KamState {
    pub energy: f64,
    pub a: Mat2,
    pub f: TorusMatrixMap,
    /// Signed eigen-angle of `a` (zero or `pi` when `a` is not elliptic).
    pub xi: f64,
    pub elliptic: bool,
    /// `k_j` per completed step, the zero vector marking non-resonant steps.
    pub history: Vec<Vec<i64>>,
    pub j: usize,
    pub schedule: KamSchedule,
    pub residual_norm: f64,
    pub omega: FrequencyVector,
    pub conjugations: Vec<Conjugation>,
    initial_a: Mat2,
    initial_f: TorusMatrixMap,
}

fn signed_xi(a: &Mat2) -> (f64, bool) {
    match linalg::signed_angle(a) {
        Some(s) => (s, true),
        None => (if a[0][0] + a[1][1] > 0.0 { 0.0 } else { PI }, false),
    }
}

impl KamState {
    /// `A_0 = [[-E, -1], [1, 0]]`, `f_0 = [[0, 0], [-P, 0]]`, so that
    /// `A_0 e^{f_0}` is the transfer matrix.
    pub fn initial(
        e: f64,
        p: &QuasiPeriodicPotential,
        omega: &FrequencyVector,
        schedule: &KamSchedule,
    ) -> Result<Self> {
        if p.dim() != omega.dim() {
            return Err(Error::DimensionMismatch { expected: p.dim(), got: omega.dim() });
        }
        let mut coeffs = BTreeMap::new();
        for (k, &c) in p.coeffs() {
            let mut m = czero();
            m[1][0] = Complex64::new(-c, 0.0);
            coeffs.insert(k.iter().map(|x| 2 * x).collect::<Vec<_>>(), m);
        }
        let f = TorusMatrixMap { d: p.dim(), coeffs };
        let a = [[-e, -1.0], [1.0, 0.0]];
        let (xi, elliptic) = signed_xi(&a);
        Ok(Self {
            energy: e,
            a,
            residual_norm: f.norm(),
            f: f.clone(),
            xi,
            elliptic,
            history: vec![],
            j: 0,
            schedule: schedule.clone(),
            omega: omega.clone(),
            conjugations: vec![],
            initial_a: a,
            initial_f: f,
        })
    }

    /// Accumulated conjugacy at `theta`.
    pub fn conjugacy(&self, theta: &[f64]) -> Mat2 {
        self.conjugations
            .iter()
            .fold(linalg::IDENTITY, |z, c| linalg::mul(&z, &c.eval(theta)))
    }

    /// Current cocycle `A e^{f(theta)}`.
    pub fn cocycle(&self, theta: &[f64]) -> Mat2 {
        linalg::mul(&self.a, &exp_sl2(&self.f.eval(theta)))
    }

    /// Original cocycle `A_0 e^{f_0(theta)}`.
    pub fn original(&self, theta: &[f64]) -> Mat2 {
        linalg::mul(&self.initial_a, &exp_sl2(&self.initial_f.eval(theta)))
    }

    /// Max entrywise gap between `Z(theta + omega)^{-1} B_0(theta) Z(theta)`
    /// and the current cocycle on 256 points of the doubled torus, with the
    /// largest `||Z||^2` seen.
    pub fn conjugacy_defect(&self) -> ConjugacyCheck {
        let d = self.omega.dim();
        let mut defect = 0.0f64;
        let mut cond = 1.0f64;
        for theta in check_points(d) {
            let shifted: Vec<f64> = theta.iter().zip(self.omega.omega()).map(|(t, w)| t + w).collect();
            let z = self.conjugacy(&theta);
            let zs = self.conjugacy(&shifted);
            let lhs = linalg::mul(&linalg::inv_sl2(&zs), &linalg::mul(&self.original(&theta), &z));
            defect = defect.max(linalg::max_abs(&linalg::sub(&lhs, &self.cocycle(&theta))));
            cond = cond.max(linalg::frobenius(&z).powi(2)).max(linalg::frobenius(&zs).powi(2));
        }
        ConjugacyCheck { defect, condition: cond }
    }

    fn with_a(mut self, a: Mat2) -> Self {
        let (xi, elliptic) = signed_xi(&a);
        self.a = a;
        self.xi = xi;
        self.elliptic = elliptic;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugacyCheck {
    pub defect: f64,
    pub condition: f64,
}

/// 256 fixed points of `[0, 2)^d`, off the sampling grids used by the steps.
pub fn check_points(d: usize) -> Vec<Vec<f64>> {
    const SHIFTS: [f64; 4] = [0.371, 0.618_033_988_749_895, 0.414_213_562_373_095, 0.732_050_807_568_877];
    (0..256)
        .map(|j| {
            if d == 1 {
                vec![2.0 * (j as f64 + SHIFTS[0]) / 256.0]
            } else {
                (0..d)
                    .map(|i| 2.0 * ((j as f64 + 0.5) * SHIFTS[1 + i % 3] + 0.1 * i as f64).fract())
                    .collect()
            }
        })
        .collect()
}

/// Columns are eigenvectors of `a` for `e^{+i xi}` and `e^{-i xi}`.
fn eigenbasis(a: &Mat2, xi: f64) -> CMat2 {
    let lam = Complex64::from_polar(1.0, xi);
    let (b, c) = (a[0][1], a[1][0]);
    let v = if b.abs() >= c.abs() {
        [Complex64::new(b, 0.0), lam - a[0][0]]
    } else {
        [lam - a[1][1], Complex64::new(c, 0.0)]
    };
    [[v[0], v[0].conj()], [v[1], v[1].conj()]]
}

/// Conjugation by `H_{k0}`: `A -> H(theta + omega)^{-1} A H(theta)` is constant
/// with angle `xi - pi <k0, omega>`, and `f -> H^{-1} f H`.
pub fn resonant_rotation(state: &KamState, k0: &[i64]) -> Result<KamState> {
    if !state.elliptic {
        return Err(Error::NotElliptic { trace: state.a[0][0] + state.a[1][1] });
    }
    if k0.len() != state.omega.dim() {
        return Err(Error::DimensionMismatch { expected: state.omega.dim(), got: k0.len() });
    }
    if k0.iter().all(|&k| k == 0) {
        return Err(Error::InvalidInput("resonant mode must be non-zero".into()));
    }
    let basis = eigenbasis(&state.a, state.xi);
    let binv = cinv(&basis);
    let shift = PI * state.omega.dot(k0);
    let new_a = linalg::mul(&state.a, &rotation_in_basis(&basis, Complex64::from_polar(1.0, -shift)));

    let two_k: Vec<i64> = k0.iter().map(|k| 2 * k).collect();
    let mut coeffs: BTreeMap<Vec<i64>, CMat2> = BTreeMap::new();
    let mut add = |key: Vec<i64>, i: usize, j: usize, v: Complex64| {
        coeffs.entry(key).or_insert_with(czero)[i][j] += v;
    };
    for (m, c) in state.f.coeffs() {
        let h = cmul(&binv, &cmul(c, &basis));
        add(m.clone(), 0, 0, h[0][0]);
        add(m.clone(), 1, 1, h[1][1]);
        add(m.iter().zip(&two_k).map(|(a, b)| a - b).collect(), 0, 1, h[0][1]);
        add(m.iter().zip(&two_k).map(|(a, b)| a + b).collect(), 1, 0, h[1][0]);
    }
    let coeffs = coeffs
        .into_iter()
        .map(|(m, h)| (m, cmul(&basis, &cmul(&h, &binv))))
        .filter(|(_, c)| cfrob(c) > DROP_BELOW)
        .collect();
    let mut f = TorusMatrixMap { d: state.f.d, coeffs };
    f.symmetrize();

    let mut out = state.clone();
    out.f = f;
    out.residual_norm = out.f.norm();
    out.conjugations.push(Conjugation::Rotation { basis, k: k0.to_vec() });
    let mut out = out.with_a(new_a);
    // history entry is written by the step that follows
    out.history.push(k0.to_vec());
    Ok(out)
}

/// Diagnostics of one homological solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub min_divisor: f64,
    pub symmetrization_defect: f64,
    pub y_norm: f64,
    pub truncation: u32,
}

/// Solve `Y - z A^{-1} Y A = -F` on `gl(2, C)`.
fn solve_mode(a: &Mat2, ainv: &Mat2, z: Complex64, rhs: &CMat2) -> CMat2 {
    // columns: images of the basis matrices E_pq, flattened row-major
    let mut m = [[Complex64::new(0.0, 0.0); 5]; 4];
    for col in 0..4 {
        let mut e = [[0.0; 2]; 2];
        e[col / 2][col % 2] = 1.0;
        let img = linalg::mul(ainv, &linalg::mul(&e, a));
        for row in 0..4 {
            let id = if row == col { 1.0 } else { 0.0 };
            m[row][col] = Complex64::new(id, 0.0) - z * img[row / 2][row % 2];
        }
    }
    for row in 0..4 {
        m[row][4] = -rhs[row / 2][row % 2];
    }
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| m[i][c].norm().total_cmp(&m[j][c].norm())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for r in (c + 1)..4 {
            let f = m[r][c] / piv;
            for k in c..5 {
                let t = m[c][k];
                m[r][k] -= f * t;
            }
        }
    }
    let mut x = [Complex64::new(0.0, 0.0); 4];
    for r in (0..4).rev() {
        let mut s = m[r][4];
        for k in (r + 1)..4 {
            s -= m[r][k] * x[k];
        }
        x[r] = s / m[r][r];
    }
    [[x[0], x[1]], [x[2], x[3]]]
}

fn eigenvalues(a: &Mat2) -> [Complex64; 2] {
    let h = 0.5 * (a[0][0] + a[1][1]);
    let disc = Complex64::new(h * h - linalg::det(a), 0.0).sqrt();
    [Complex64::new(h, 0.0) + disc, Complex64::new(h, 0.0) - disc]
}

/// Smallest `|1 - z lambda_b / lambda_a|` over the eigenvalue pairs of `a`.
fn min_divisor(lams: &[Complex64; 2], z: Complex64) -> f64 {
    let mut best = f64::INFINITY;
    for la in lams {
        for lb in lams {
            best = best.min((Complex64::new(1.0, 0.0) - z * lb / la).norm());
        }
    }
    best
}

fn grid_size(d: usize, max_key: i64) -> usize {
    let (floor, cap) = if d == 1 { (256, 4096) } else { (64, 256) };
    let need = (4 * max_key + 64) as usize;
    need.next_power_of_two().clamp(floor, cap)
}

/// One homological step with the schedule's truncation at the current `j`.
pub fn kam_step(state: &KamState) -> Result<KamState> {
    let n = state.schedule.n_eff(state.j);
    kam_step_truncated(state, n).map(|(s, _)| s)
}

/// Conjugate by `e^Y`, with `Y` supported on `0 < |m|_1 / 2 <= n`, and absorb
/// the zero mode of `f` into the constant part.
pub fn kam_step_truncated(state: &KamState, n: u32) -> Result<(KamState, StepDiagnostics)> {
    let d = state.f.d;
    let a = state.a;
    let ainv = linalg::inv_sl2(&a);
    let lams = eigenvalues(&a);
    let mut y = BTreeMap::new();
    let mut smallest = f64::INFINITY;
    for (m, c) in state.f.coeffs() {
        let l1 = model::l1_norm(m);
        if l1 == 0 || l1 > 2 * n as i64 {
            continue;
        }
        let z = Complex64::from_polar(1.0, PI * state.omega.dot(m));
        let div = min_divisor(&lams, z);
        smallest = smallest.min(div);
        if div < 1e-14 {
            return Err(Error::SmallDivisor { divisor: div, mode: m.clone() });
        }
        y.insert(m.clone(), solve_mode(&a, &ainv, z, c));
    }
    let mut ymap = TorusMatrixMap { d, coeffs: y };
    let sym = ymap.symmetrize();
    let new_a = linalg::mul(&a, &exp_sl2(&state.f.zero_mode()));
    let new_ainv = linalg::inv_sl2(&new_a);
    let omega = state.omega.omega().to_vec();
    let m = grid_size(d, state.f.max_key().max(ymap.max_key()));
    let f = &state.f;
    let new_f = TorusMatrixMap::sampled(d, m, |theta| {
        let shifted: Vec<f64> = theta.iter().zip(&omega).map(|(t, w)| t + w).collect();
        let left = exp_sl2(&linalg::scale(&ymap.eval(&shifted), -1.0));
        let right = exp_sl2(&ymap.eval(theta));
        let g = linalg::mul(
            &new_ainv,
            &linalg::mul(&left, &linalg::mul(&a, &linalg::mul(&exp_sl2(&f.eval(theta)), &right))),
        );
        log_sl2(&g)
    })?;

    let diag = StepDiagnostics {
        min_divisor: smallest,
        symmetrization_defect: sym,
        y_norm: ymap.norm(),
        truncation: n,
    };
    let mut out = state.clone();
    if !ymap.is_zero() {
        out.conjugations.push(Conjugation::Exp(ymap));
    }
    out.f = new_f;
    out.residual_norm = out.f.norm();
    out.j += 1;
    let resonant_marker = state.history.len() > state.j;
    if !resonant_marker {
        out.history.push(vec![0; d]);
    }
    Ok((out.with_a(new_a), diag))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub j: usize,
    /// Signed eigen-angle after the step.
    pub xi: f64,
    pub k: Option<Vec<i64>>,
    pub resonance_violations: usize,
    pub residual: f64,
    pub defect: f64,
    pub condition: f64,
    pub truncation: u32,
    pub n_schedule: f64,
    pub min_divisor: f64,
    pub symmetrization_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducibilityReport {
    pub energy: f64,
    pub steps: Vec<StepRecord>,
    /// `xi_J + sum_l pi <k_l, omega>`, wrapped into `(-pi/2, 3 pi / 2]`.
    pub rho_j: f64,
    /// One plus the index of the last resonant step, zero if there was none.
    pub stratum: usize,
    pub xi: f64,
    pub elliptic: bool,
    pub residual: f64,
    pub terminated: Option<String>,
    #[serde(skip)]
    pub state: KamState,
}

/// Circular distance on `R / 2 pi Z`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn wrap_rho(x: f64) -> f64 {
    let mut r = x.rem_euclid(2.0 * PI);
    if r > 1.5 * PI {
        r -= 2.0 * PI;
    }
    r
}

pub fn reduce(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    schedule: &KamSchedule,
) -> Result<ReducibilityReport> {
    reduce_with(e, p, omega, schedule, true)
}

/// As [`reduce`]; with `verify` off the per-step conjugacy check is skipped
/// and recorded as NaN.
pub fn reduce_with(
    e: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    schedule: &KamSchedule,
    verify: bool,
) -> Result<ReducibilityReport> {
    let eps0 = model::strip_norm(p);
    if eps0 >= 1.0 {
        return Err(Error::InvalidInput(format!("strip norm {eps0} must be below 1")));
    }
    let mut state = KamState::initial(e, p, omega, schedule)?;
    let mut steps = Vec::new();
    let mut stratum = 0;
    let mut terminated = None;
    // a rotation by k moves the low modes by |k|; widen the window to follow them
    let mut shift = 0u32;
    for j in 0..schedule.j_max {
        let before = state.residual_norm;
        let resonance = if state.elliptic && before > 0.0 {
            check_resonance(state.xi, omega, schedule.eps(j), schedule.sigma, omega.tau(), schedule.n_eff(j))
        } else {
            Resonance::NonResonant
        };
        let mut k_rec = None;
        let mut violations = 0;
        if let Resonance::Resonant { k, violations: v, .. } = resonance {
            state = resonant_rotation(&state, &k)?;
            shift += model::l1_norm(&k) as u32;
            stratum = j + 1;
            violations = v;
            k_rec = Some(k);
        }
        let (next, diag) = kam_step_truncated(&state, schedule.n_eff(j) + shift)?;
        state = next;
        let check = if verify {
            state.conjugacy_defect()
        } else {
            ConjugacyCheck { defect: f64::NAN, condition: f64::NAN }
        };
        steps.push(StepRecord {
            j,
            xi: state.xi,
            k: k_rec,
            resonance_violations: violations,
            residual: state.residual_norm,
            defect: check.defect,
            condition: check.condition,
            truncation: diag.truncation,
            n_schedule: schedule.n[j.min(schedule.n.len() - 1)],
            min_divisor: diag.min_divisor,
            symmetrization_defect: diag.symmetrization_defect,
        });
        if state.residual_norm > before && before > NOISE_FLOOR {
            terminated = Some(format!(
                "residual grew from {before:e} to {:e} at step {j}",
                state.residual_norm
            ));
            break;
        }
    }
    Ok(ReducibilityReport {
        energy: e,
        rho_j: wrap_rho(rho_sum(&state)),
        stratum,
        xi: state.xi,
        elliptic: state.elliptic,
        residual: state.residual_norm,
        terminated,
        steps,
        state,
    })
}

fn rho_sum(state: &KamState) -> f64 {
    state.xi
        + state
            .history
            .iter()
            .map(|k| PI * state.omega.dot(k))
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoDerivatives {
    pub energy: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Free-case values at the same energy.
    pub free_d1: f64,
    pub free_d2: f64,
    pub free_d3: f64,
}

/// `d^s/dE^s arccos(-E/2)` for `s = 1, 2, 3`.
pub fn free_rho_derivatives(e: f64) -> [f64; 3] {
    let q = 4.0 - e * e;
    [q.powf(-0.5), e * q.powf(-1.5), q.powf(-1.5) + 3.0 * e * e * q.powf(-2.5)]
}

/// Central differences of `rho_J` on a uniform grid of reports, with one
/// Richardson extrapolation between spacings `h` and `2h`. Rows need two
/// neighbours at distance `2h` on each side.
pub fn rho_j_derivatives(reports: &[ReducibilityReport]) -> Result<Vec<RhoDerivatives>> {
    if reports.len() < 5 {
        return Err(Error::InvalidInput("need at least five grid points".into()));
    }
    let h = reports[1].energy - reports[0].energy;
    if !(h > 0.0)
        || reports
            .windows(2)
            .any(|w| ((w[1].energy - w[0].energy) - h).abs() > 1e-9 * h.abs().max(1e-300))
    {
        return Err(Error::InvalidInput("energy grid must be uniform and increasing".into()));
    }
    let hist = &reports[0].state.history;
    if reports.iter().any(|r| &r.state.history != hist) {
        return Err(Error::InvalidInput(
            "grid crosses a change of resonance history; split it".into(),
        ));
    }
    // unwrap rho along the grid
    let mut rho = vec![reports[0].rho_j];
    for r in &reports[1..] {
        let prev = *rho.last().unwrap();
        let mut v = r.rho_j;
        while v - prev > PI {
            v -= 2.0 * PI;
        }
        while prev - v > PI {
            v += 2.0 * PI;
        }
        rho.push(v);
    }
    let mut out = Vec::new();
    for i in 4..rho.len().saturating_sub(4) {
        let d = |s: usize| -> [f64; 3] {
            let hs = h * s as f64;
            let (m2, m1, p1, p2) = (rho[i - 2 * s], rho[i - s], rho[i + s], rho[i + 2 * s]);
            [
                (p1 - m1) / (2.0 * hs),
                (p1 - 2.0 * rho[i] + m1) / (hs * hs),
                (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * hs * hs * hs),
            ]
        };
        let (a, b) = (d(1), d(2));
        let e = reports[i].energy;
        let free = free_rho_derivatives(e);
        out.push(RhoDerivatives {
            energy: e,
            d1: (4.0 * a[0] - b[0]) / 3.0,
            d2: (4.0 * a[1] - b[1]) / 3.0,
            d3: (4.0 * a[2] - b[2]) / 3.0,
            free_d1: free[0],
            free_d2: free[1],
            free_d3: free[2],
        });
    }
    Ok(out)
}
