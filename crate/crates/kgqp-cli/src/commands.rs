//! One function per subcommand. Each writes its tables through an [`OutputSet`].

use kgqp::cocycle;
use kgqp::dispersion::{self, OscOptions};
use kgqp::evolve::{self, LinearPropagator, NonlinearParams, RealState};
use kgqp::kam;
use kgqp::model::LatticeConfig;
use kgqp::operator::{build_finite_section, eigendecompose};
use kgqp::quadrature;
use kgqp::spectral::{self, GridOptions};
use serde::Serialize;

use crate::output::OutputSet;
use crate::{CliError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Evolve,
    Rotation,
    Kam,
    Spectral,
    Dispersion,
    Decay,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Evolve => "evolve",
            Command::Rotation => "rotation",
            Command::Kam => "kam",
            Command::Spectral => "spectral",
            Command::Dispersion => "dispersion",
            Command::Decay => "decay",
        }
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    match cmd {
        Command::Spectrum => spectrum(cfg, out),
        Command::Evolve => evolve_cmd(cfg, out),
        Command::Rotation => rotation(cfg, out),
        Command::Kam => kam_cmd(cfg, out),
        Command::Spectral => spectral_cmd(cfg, out),
        Command::Dispersion => dispersion_cmd(cfg, out),
        Command::Decay => decay(cfg, out),
    }
}

fn spectrum(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let h = build_finite_section(&cfg.potential()?, &cfg.frequency()?, &cfg.lattice()?)?;
    let d = eigendecompose(&h)?;
    let rows: Vec<Vec<f64>> = d.values().iter().enumerate().map(|(i, e)| vec![i as f64, *e]).collect();
    out.csv("spectrum.csv", &["index", "energy"], &rows)
}

fn centre_delta(lat: &LatticeConfig) -> Result<RealState, CliError> {
    let site = lat
        .index_of(0)
        .ok_or_else(|| CliError::Validation("site 0 lies outside the lattice".into()))?;
    Ok(RealState::delta(lat.n_sites(), site))
}

fn norms(u: &[f64]) -> [f64; 3] {
    [
        u.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        u.iter().map(|x| x * x).sum::<f64>().sqrt(),
        u.iter().map(|x| x.abs()).sum(),
    ]
}

fn evolve_cmd(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let lat = cfg.lattice()?;
    let h = build_finite_section(&cfg.potential()?, &cfg.frequency()?, &lat)?;
    let d = eigendecompose(&h)?;
    let s0 = centre_delta(&lat)?;
    let states = if cfg.lambda == 0.0 {
        let times = quadrature::lin_space(0.0, cfg.t_max, cfg.samples);
        LinearPropagator::new(&d)?.propagate_many(&s0, &times)?
    } else {
        let steps = (cfg.t_max / cfg.dt).round().max(1.0) as usize;
        let params = NonlinearParams {
            lambda: cfg.lambda,
            kappa: cfg.kappa,
            dt: cfg.dt,
            t_max: cfg.t_max,
            record_every: (steps / cfg.samples.max(1)).max(1),
        };
        let run = evolve::nonlinear_evolve(&d, &h, &s0, &params)?;
        if let Some(a) = &run.abort {
            return Err(CliError::Numerical(format!("state became non-finite at t = {}", a.time)));
        }
        run.states
    };
    let rows: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let e = evolve::section_energy(s, &h, cfg.lambda, cfg.kappa);
            let [a, b, c] = norms(&s.u);
            vec![s.time, a, b, c, e.linear_energy, e.total]
        })
        .collect();
    out.csv("evolve.csv", &["t", "linf", "l2", "l1", "linear_energy", "total_energy"], &rows)
}

fn rotation(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let p = cfg.potential()?;
    let w = cfg.frequency()?;
    let th = cfg.theta();
    let mut rows = vec![];
    for e in cfg.egrid.linear() {
        let rho = cocycle::rotation_number(e, &p, &w, &th, cfg.iterations)?;
        let ly = cocycle::lyapunov_exponent(e, &p, &w, &th, cfg.iterations)?;
        rows.push(vec![e, rho, ly]);
    }
    out.csv("rotation.csv", &["energy", "rho", "lyapunov"], &rows)
}

fn kam_cmd(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let p = cfg.potential()?;
    let w = cfg.frequency()?;
    let s = cfg.schedule()?;
    let mut rows = vec![];
    let mut reports = vec![];
    for e in cfg.egrid.linear() {
        let r = kam::reduce(e, &p, &w, &s)?;
        rows.push(vec![
            e,
            r.rho_j,
            r.stratum as f64,
            r.xi,
            r.elliptic as u8 as f64,
            r.residual,
            r.steps.len() as f64,
            r.terminated.is_some() as u8 as f64,
        ]);
        reports.push(r);
    }
    out.csv(
        "kam.csv",
        &["energy", "rho_j", "stratum", "xi", "elliptic", "residual", "steps", "terminated"],
        &rows,
    )?;
    out.json("kam.json", &serde_json::json!({ "reports": reports }))
}

#[derive(Serialize)]
struct SpectralSummary {
    samples: usize,
    plancherel_delta0: f64,
    inverse_delta0: f64,
    max_recurrence_residual: f64,
    excluded_weight: f64,
}

fn spectral_cmd(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let n = (2 * cfg.window + 1) as usize;
    let opts = GridOptions::new(cfg.theta(), -cfg.window, n);
    let g = spectral::build_grid(&cfg.potential()?, &cfg.frequency()?, &cfg.schedule()?, &opts)?;
    let rows: Vec<Vec<f64>> = (0..g.len())
        .map(|s| {
            vec![
                g.rho[s],
                g.weights[s],
                g.energies[s],
                g.rho_prime[s],
                g.strata[s] as f64,
                g.sin_xi[s],
                g.included[s] as u8 as f64,
            ]
        })
        .collect();
    out.csv(
        "spectral.csv",
        &["rho", "weight", "energy", "rho_prime", "stratum", "sin_xi", "included"],
        &rows,
    )?;
    let mut q = vec![0.0; n];
    q[cfg.window as usize] = 1.0;
    let summary = SpectralSummary {
        samples: g.len(),
        plancherel_delta0: spectral::plancherel_defect(&q, &g)?,
        inverse_delta0: spectral::inverse_check(&q, &g, 0)?,
        max_recurrence_residual: g.max_recurrence_residual,
        excluded_weight: g.excluded_weight,
    };
    out.json("spectral.json", &summary)
}

fn dispersion_cmd(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let times = quadrature::log_space(cfg.t_min(), cfg.t_max, cfg.samples);
    let sweep = dispersion::dispersive_bound_sweep(&times, &cfg.mlist, |_| 1.0, &OscOptions::default())?;
    let rows: Vec<Vec<f64>> = sweep
        .rows
        .iter()
        .map(|r| vec![r.t, r.m, r.value.re, r.value.im, r.value.norm(), r.bound, r.ratio])
        .collect();
    out.csv("dispersion.csv", &["t", "M", "re", "im", "abs", "bound", "ratio"], &rows)?;
    out.json(
        "dispersion.json",
        &serde_json::json!({
            "fitted_constant": sweep.fitted_constant,
            "violations": sweep.violations,
            "scaled_sup": sweep.scaled_sup,
        }),
    )
}

fn decay(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let n = cfg.sites.max((2.2 * cfg.t_max).ceil() as usize + 100);
    let lat = LatticeConfig::new(n, cfg.theta())?;
    let h = build_finite_section(&cfg.potential()?, &cfg.frequency()?, &lat)?;
    let d = eigendecompose(&h)?;
    let s0 = centre_delta(&lat)?;
    let times = quadrature::log_space(cfg.t_min(), cfg.t_max, cfg.samples);
    let traj = LinearPropagator::new(&d)?.propagate_many(&s0, &times)?;
    let prof = evolve::decay_profile(&traj)?;
    let fit = dispersion::fit_decay_exponent(&prof, cfg.t_min(), cfg.t_max)?;
    let rows: Vec<Vec<f64>> = (0..prof.times.len())
        .map(|i| vec![prof.times[i], prof.linf[i], prof.l2[i], prof.l1[i]])
        .collect();
    out.csv("decay.csv", &["t", "linf", "l2", "l1"], &rows)?;
    out.json("decay.json", &serde_json::json!({ "sites": n, "fit": fit }))
}
