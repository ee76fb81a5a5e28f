//! Bloch waves from the KAM conjugacy and the spectral transform they define.
//!
//! On a reduced energy `Z(theta + omega)^{-1} A(theta) Z(theta) = B` and the
//! sequence `psi_n = lambda^n (Z(theta + n omega) v)_1`, with `B v = lambda v`,
//! solves `H psi = E psi`. With `f_n = e^{-i n rho} psi_n`,
//! `K_n = Im(psi_n conj psi_0)` and `J_n = Re(psi_n conj psi_0)` the transform
//! `q -> (sum q_n K_n, sum q_n J_n)` is close to an isometry into
//! `L^2(rho' dE / pi)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::kam::{self, KamSchedule, ReducibilityReport};
use crate::model::{self, FrequencyVector, QuasiPeriodicPotential};
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// Resonant-stratum samples with `|sin xi_J|` below this are left out of the quadrature.
pub const SIN_XI_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlochWave {
    pub energy: f64,
    pub rho: f64,
    pub xi: f64,
    pub stratum: usize,
    pub first_site: i64,
    /// `f_n = e^{-i n rho} psi_n` on the window.
    pub f: Vec<Complex64>,
    /// `|psi_1 conj psi_0 - psi_0 conj psi_1|`.
    pub wronskian: f64,
    /// Torus mean of `|f|^2`.
    pub mean_sq: f64,
    pub rho_prime: f64,
    /// Largest `|-(psi_{n+1} + psi_{n-1}) + P psi_n - E psi_n|` over interior sites,
    /// relative to the largest `|psi_n|`.
    pub recurrence_residual: f64,
}

impl BlochWave {
    pub fn psi(&self, n: i64) -> Complex64 {
        let i = (n - self.first_site) as usize;
        self.f[i] * Complex64::from_polar(1.0, n as f64 * self.rho)
    }

    pub fn sites(&self) -> std::ops::Range<i64> {
        self.first_site..self.first_site + self.f.len() as i64
    }
}

fn torus_mean_points(d: usize) -> Vec<Vec<f64>> {
    let m: usize = if d == 1 { 512 } else { 64 };
    let total = m.pow(d as u32);
    (0..total)
        .map(|mut c| {
            (0..d)
                .map(|_| {
                    let i = c % m;
                    c /= m;
                    2.0 * i as f64 / m as f64
                })
                .collect()
        })
        .collect()
}

/// Unnormalized profile `(Z(theta) v)_1` and the eigenvalue `lambda`.
struct Profile<'a> {
    report: &'a ReducibilityReport,
    v: [Complex64; 2],
    lambda: Complex64,
}

impl<'a> Profile<'a> {
    fn new(report: &'a ReducibilityReport) -> Result<Self> {
        let st = &report.state;
        if !st.elliptic {
            return Err(Error::NotElliptic { trace: st.a[0][0] + st.a[1][1] });
        }
        let b = st.a;
        let lambda = Complex64::from_polar(1.0, st.xi);
        let v = if b[0][1].abs() >= b[1][0].abs() {
            [Complex64::new(b[0][1], 0.0), lambda - b[0][0]]
        } else {
            [lambda - b[1][1], Complex64::new(b[1][0], 0.0)]
        };
        Ok(Self { report, v, lambda })
    }

    fn at(&self, theta: &[f64]) -> Complex64 {
        let z = self.report.state.conjugacy(theta);
        self.v[0] * z[0][0] + self.v[1] * z[0][1]
    }

    fn psi(&self, theta: &[f64], omega: &FrequencyVector, n: i64) -> Complex64 {
        self.lambda.powi(n as i32) * self.at(&shift(theta, omega, n))
    }

    fn mean_sq(&self, d: usize) -> f64 {
        let pts = torus_mean_points(d);
        pts.iter().map(|t| self.at(t).norm_sqr()).sum::<f64>() / pts.len() as f64
    }
}

fn shift(theta: &[f64], omega: &FrequencyVector, n: i64) -> Vec<f64> {
    theta
        .iter()
        .zip(omega.omega())
        .map(|(t, w)| t + n as f64 * w)
        .collect()
}

/// `rho' = <|f|^2> / |W|` at a reduced energy.
pub fn rho_prime(report: &ReducibilityReport, theta: &[f64]) -> Result<f64> {
    let prof = Profile::new(report)?;
    let om = &report.state.omega;
    let w = 2.0 * (prof.psi(theta, om, 1) * prof.psi(theta, om, 0).conj()).im.abs();
    Ok(prof.mean_sq(om.dim()) / w)
}

/// Bloch wave on `sites`, normalized by `f_0 > 0` and `|f_0|^2 <|f|^2> = 1`.
pub fn bloch_wave(
    report: &ReducibilityReport,
    p: &QuasiPeriodicPotential,
    theta: &[f64],
    sites: std::ops::Range<i64>,
) -> Result<BlochWave> {
    if report.residual > 1e-6 {
        return Err(Error::Numerical(format!(
            "reduction residual {:e} too large for a Bloch wave",
            report.residual
        )));
    }
    let om = report.state.omega.clone();
    if theta.len() != om.dim() {
        return Err(Error::DimensionMismatch { expected: om.dim(), got: theta.len() });
    }
    if sites.is_empty() {
        return Err(Error::InvalidInput("site window is empty".into()));
    }
    let prof = Profile::new(report)?;
    let rho = report.rho_j;
    let psi0 = prof.psi(theta, &om, 0);
    let psi1 = prof.psi(theta, &om, 1);
    let mean_sq = prof.mean_sq(om.dim());
    let wronskian_raw = 2.0 * (psi1 * psi0.conj()).im.abs();
    let scale = (psi0.norm_sqr() * mean_sq).powf(-0.25);
    let c = Complex64::from_polar(scale, -psi0.arg());
    let raw: Vec<Complex64> = (sites.start - 1..sites.end + 1)
        .map(|n| prof.psi(theta, &om, n) * c)
        .collect();
    let mut worst = 0.0f64;
    let big = raw.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    for (i, n) in sites.clone().enumerate() {
        let pot = p.eval_unchecked(&shift(theta, &om, n));
        let r = -(raw[i + 2] + raw[i]) + raw[i + 1] * (pot - report.energy);
        worst = worst.max(r.norm());
    }
    let f = sites
        .clone()
        .enumerate()
        .map(|(i, n)| match n {
            0 => Complex64::new(raw[i + 1].norm(), 0.0),
            _ => raw[i + 1] * Complex64::from_polar(1.0, -(n as f64) * rho),
        })
        .collect();
    Ok(BlochWave {
        energy: report.energy,
        rho,
        xi: report.xi,
        stratum: report.stratum,
        first_site: sites.start,
        f,
        wronskian: wronskian_raw * scale * scale,
        mean_sq: mean_sq * scale * scale,
        rho_prime: mean_sq / wronskian_raw,
        recurrence_residual: worst / big.max(f64::MIN_POSITIVE),
    })
}

/// `(K_n, J_n)` on the wave's window.
pub fn eigenfunctions_kj(wave: &BlochWave) -> (Vec<f64>, Vec<f64>) {
    let f0 = wave_f0(wave);
    let mut k = Vec::with_capacity(wave.f.len());
    let mut j = Vec::with_capacity(wave.f.len());
    for (i, fz) in wave.f.iter().enumerate() {
        let n = wave.first_site + i as i64;
        let z = Complex64::from_polar(1.0, n as f64 * wave.rho) * fz * f0.conj();
        k.push(z.im);
        j.push(z.re);
    }
    (k, j)
}

fn wave_f0(wave: &BlochWave) -> Complex64 {
    if wave.sites().contains(&0) {
        wave.f[(-wave.first_site) as usize]
    } else {
        Complex64::new(wave.mean_sq.powf(-0.5), 0.0)
    }
}

/// `beta_{n,n*}` for `n* = n - 1, n, n + 1` with
/// `K_n = sum beta_{n,n*} sin(n* rho)` and `J_n = sum beta_{n,n*} cos(n* rho)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaTable {
    pub energy: f64,
    pub first_site: i64,
    pub lower: Vec<f64>,
    pub diagonal: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn beta_coefficients(wave: &BlochWave) -> BetaTable {
    let f0 = wave_f0(wave);
    let (s, c) = wave.rho.sin_cos();
    let mut lower = Vec::with_capacity(wave.f.len());
    let mut diagonal = Vec::with_capacity(wave.f.len());
    for fz in &wave.f {
        let cn = fz * f0.conj();
        lower.push(-cn.im / s);
        diagonal.push(cn.re + cn.im * c / s);
    }
    BetaTable {
        energy: wave.energy,
        first_site: wave.first_site,
        upper: vec![0.0; lower.len()],
        lower,
        diagonal,
    }
}

/// Quadrature nodes in `rho` with the eigenfunction tables on a site window.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralGrid {
    pub first_site: i64,
    pub n_sites: usize,
    pub rho: Vec<f64>,
    /// Gauss-Legendre weights in `rho`; `rho' dE = d rho`.
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
    pub rho_prime: Vec<f64>,
    pub strata: Vec<usize>,
    pub sin_xi: Vec<f64>,
    /// A Bloch wave was built at the sample (elliptic, converged reduction).
    pub computed: Vec<bool>,
    pub included: Vec<bool>,
    /// Row-major `[sample][site]`.
    pub k: Vec<f64>,
    pub j: Vec<f64>,
    pub max_recurrence_residual: f64,
    pub excluded_weight: f64,
}

impl SpectralGrid {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Re-applies the `|sin xi|` exclusion on resonant strata with another
    /// cutoff. Samples without a wave stay excluded.
    pub fn recut(&mut self, cutoff: f64) {
        self.excluded_weight = 0.0;
        for s in 0..self.len() {
            let keep = self.computed[s] && (self.strata[s] == 0 || self.sin_xi[s] >= cutoff);
            self.included[s] = keep;
            if !keep {
                self.excluded_weight += self.weights[s];
            }
        }
    }

    fn row<'a>(&self, table: &'a [f64], s: usize) -> &'a [f64] {
        &table[s * self.n_sites..(s + 1) * self.n_sites]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub theta: Vec<f64>,
    pub first_site: i64,
    pub n_sites: usize,
    pub panels: usize,
    pub nodes_per_panel: usize,
    /// Largest `|k|` whose gap label `pi <k, omega> mod pi` becomes a panel break.
    pub label_order: u32,
}

impl GridOptions {
    pub fn new(theta: Vec<f64>, first_site: i64, n_sites: usize) -> Self {
        Self { theta, first_site, n_sites, panels: 64, nodes_per_panel: 16, label_order: 6 }
    }
}

/// Energy with `rho_J(E) = target`, by safeguarded Newton on the monotone
/// map `E -> rho_J(E)`.
pub fn energy_for_rho(
    target: f64,
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    schedule: &KamSchedule,
    theta: &[f64],
) -> Result<ReducibilityReport> {
    let eps0 = model::strip_norm(p);
    let (mut lo, mut hi) = (-2.0 - 2.0 * eps0 - 1e-3, 2.0 + 2.0 * eps0 + 1e-3);
    let mut e = -2.0 * target.cos();
    let mut best: Option<(f64, ReducibilityReport)> = None;
    for _ in 0..80 {
        let r = kam::reduce_with(e, p, omega, schedule, false)?;
        let gap = r.rho_j - target;
        if best.as_ref().map_or(true, |(g, _)| gap.abs() < g.abs()) {
            best = Some((gap, r.clone()));
        }
        if gap.abs() < 1e-13 || hi - lo < 1e-15 {
            break;
        }
        if gap < 0.0 {
            lo = lo.max(e);
        } else {
            hi = hi.min(e);
        }
        let slope = if r.state.elliptic && r.residual <= 1e-6 {
            rho_prime(&r, theta).ok().filter(|s| s.is_finite() && *s > 0.0)
        } else {
            None
        };
        let next = slope.map(|s| e - gap / s);
        e = match next {
            Some(x) if x > lo && x < hi => x,
            _ => 0.5 * (lo + hi),
        };
    }
    let (gap, r) = best.unwrap();
    if gap.abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "no energy found for rho = {target} (closest miss {gap:e})"
        )));
    }
    Ok(r)
}

fn panel_breaks(omega: &FrequencyVector, panels: usize, label_order: u32) -> Vec<f64> {
    let mut b: Vec<f64> = (0..=panels).map(|i| PI * i as f64 / panels as f64).collect();
    let d = omega.dim();
    let n = label_order as i64;
    let mut k = vec![-n; d];
    loop {
        let norm = model::l1_norm(&k);
        if norm > 0 && norm <= n {
            let label = PI * omega.dot(&k).rem_euclid(1.0);
            b.push(label);
        }
        if !model::advance(&mut k, -n, n) {
            break;
        }
    }
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-12);
    b
}

/// Gauss-Legendre panels in `rho` on `(0, pi)`, broken at the low-order gap
/// labels, with the Bloch-wave tables on the requested window.
pub fn build_grid(
    p: &QuasiPeriodicPotential,
    omega: &FrequencyVector,
    schedule: &KamSchedule,
    opts: &GridOptions,
) -> Result<SpectralGrid> {
    if opts.n_sites == 0 || opts.panels == 0 || opts.nodes_per_panel == 0 {
        return Err(Error::InvalidInput("grid needs sites, panels and nodes".into()));
    }
    let gl = GaussLegendre::new(opts.nodes_per_panel);
    let breaks = panel_breaks(omega, opts.panels, opts.label_order);
    let sites = opts.first_site..opts.first_site + opts.n_sites as i64;
    let mut grid = SpectralGrid {
        first_site: opts.first_site,
        n_sites: opts.n_sites,
        rho: vec![],
        weights: vec![],
        energies: vec![],
        rho_prime: vec![],
        strata: vec![],
        sin_xi: vec![],
        computed: vec![],
        included: vec![],
        k: vec![],
        j: vec![],
        max_recurrence_residual: 0.0,
        excluded_weight: 0.0,
    };
    for w in breaks.windows(2) {
        for (r, wt) in gl.mapped(w[0], w[1]) {
            let report = energy_for_rho(r, p, omega, schedule, &opts.theta)?;
            let sin_xi = report.xi.sin().abs();
            let (kk, jj, rp, ok) = if report.state.elliptic {
                let wave = bloch_wave(&report, p, &opts.theta, sites.clone())?;
                grid.max_recurrence_residual = grid.max_recurrence_residual.max(wave.recurrence_residual);
                let (kk, jj) = eigenfunctions_kj(&wave);
                (kk, jj, wave.rho_prime, true)
            } else {
                (vec![0.0; opts.n_sites], vec![0.0; opts.n_sites], f64::NAN, false)
            };
            grid.rho.push(r);
            grid.weights.push(wt);
            grid.energies.push(report.energy);
            grid.rho_prime.push(rp);
            grid.strata.push(report.stratum);
            grid.sin_xi.push(sin_xi);
            grid.computed.push(ok);
            grid.included.push(false);
            grid.k.extend(kk);
            grid.j.extend(jj);
        }
    }
    grid.recut(SIN_XI_CUTOFF);
    Ok(grid)
}

fn check_len(q: &[f64], grid: &SpectralGrid) -> Result<()> {
    if q.len() != grid.n_sites {
        return Err(Error::DimensionMismatch { expected: grid.n_sites, got: q.len() });
    }
    Ok(())
}

/// `(g1, g2)` per sample.
pub fn forward_transform(q: &[f64], grid: &SpectralGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(q, grid)?;
    let mut g1 = Vec::with_capacity(grid.len());
    let mut g2 = Vec::with_capacity(grid.len());
    for s in 0..grid.len() {
        let k = grid.row(&grid.k, s);
        let j = grid.row(&grid.j, s);
        g1.push(q.iter().zip(k).map(|(a, b)| a * b).sum());
        g2.push(q.iter().zip(j).map(|(a, b)| a * b).sum());
    }
    Ok((g1, g2))
}

/// `(1/pi) int (g1^2 + g2^2) rho' dE`.
pub fn transform_norm_sq(q: &[f64], grid: &SpectralGrid) -> Result<f64> {
    let (g1, g2) = forward_transform(q, grid)?;
    Ok((0..grid.len())
        .filter(|&s| grid.included[s])
        .map(|s| grid.weights[s] * (g1[s] * g1[s] + g2[s] * g2[s]))
        .sum::<f64>()
        / PI)
}

/// `| ||S q||^2 / ||q||^2 - 1 |`.
pub fn plancherel_defect(q: &[f64], grid: &SpectralGrid) -> Result<f64> {
    let nq: f64 = q.iter().map(|x| x * x).sum();
    if nq == 0.0 {
        return Err(Error::InvalidInput("zero vector has no Plancherel ratio".into()));
    }
    Ok((transform_norm_sq(q, grid)? / nq - 1.0).abs())
}

/// Largest `|(1/pi) int (g1 K_n + g2 J_n) rho' dE - q_n|` over the window with
/// `edge` sites dropped at each end.
pub fn inverse_check(q: &[f64], grid: &SpectralGrid, edge: usize) -> Result<f64> {
    let (g1, g2) = forward_transform(q, grid)?;
    let mut rec = vec![0.0; grid.n_sites];
    for s in (0..grid.len()).filter(|&s| grid.included[s]) {
        let k = grid.row(&grid.k, s);
        let j = grid.row(&grid.j, s);
        let w = grid.weights[s] / PI;
        for n in 0..grid.n_sites {
            rec[n] += w * (g1[s] * k[n] + g2[s] * j[n]);
        }
    }
    Ok((edge..grid.n_sites.saturating_sub(edge))
        .map(|n| (rec[n] - q[n]).abs())
        .fold(0.0, f64::max))
}
