//! `key = value` experiment configuration.
//!
//! Values are JSON literals (`1e-3`, `[0.1, 0.2]`, `"out"`). Lines starting
//! with `#` are comments. Unknown keys are rejected.

use std::fmt;

use kgqp::kam::{make_schedule, KamSchedule};
use kgqp::model::{FrequencyVector, LatticeConfig, QuasiPeriodicPotential};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}, field `{}`: {}", self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line, field: field.to_string(), message: message.into() }
}

/// Inclusive-endpoint grid written `lo:hi:count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Grid {
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:count, got `{s}`"));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad lower end `{}`", parts[0]))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad upper end `{}`", parts[1]))?;
        let count: usize = parts[2].trim().parse().map_err(|_| format!("bad count `{}`", parts[2]))?;
        if !(lo.is_finite() && hi.is_finite()) || count == 0 || (count > 1 && hi <= lo) {
            return Err(format!("grid `{s}` is empty or reversed"));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn linear(&self) -> Vec<f64> {
        kgqp::quadrature::lin_space(self.lo, self.hi, self.count)
    }

    pub fn logarithmic(&self) -> Result<Vec<f64>, String> {
        if self.lo <= 0.0 || self.count < 2 {
            return Err("log grid needs lo > 0 and at least two points".into());
        }
        Ok(kgqp::quadrature::log_space(self.lo, self.hi, self.count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub omega: Option<Vec<f64>>,
    pub gamma: f64,
    pub tau: f64,
    /// Amplitude of `eps cos(2 pi theta_1)`, used when `modes` is empty.
    pub eps: f64,
    /// Each entry is `[k_1, ..., k_d, coefficient]`.
    pub modes: Vec<Vec<f64>>,
    pub radius: f64,
    pub sites: usize,
    pub theta0: Option<Vec<f64>>,
    pub sigma: f64,
    pub eps0: Option<f64>,
    pub j_max: usize,
    pub n_min: u32,
    pub t_max: f64,
    /// Start of log-spaced time grids; defaults to `min(10, t_max / 10)`.
    pub t_min: Option<f64>,
    pub samples: usize,
    pub dt: f64,
    pub lambda: f64,
    pub kappa: u32,
    pub zeta: f64,
    pub egrid: Grid,
    pub mlist: Vec<f64>,
    pub iterations: usize,
    pub window: i64,
    pub seed: u64,
    pub out_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 1,
            omega: None,
            gamma: 0.25,
            tau: 1.5,
            eps: 0.0,
            modes: vec![],
            radius: 0.01,
            sites: 256,
            theta0: None,
            sigma: 0.005,
            eps0: None,
            j_max: 3,
            n_min: 20,
            t_max: 100.0,
            t_min: None,
            samples: 50,
            dt: 0.01,
            lambda: 0.0,
            kappa: 6,
            zeta: 0.32,
            egrid: Grid { lo: -2.0, hi: 2.0, count: 101 },
            mlist: vec![0.0],
            iterations: 100_000,
            window: 10,
            seed: 0,
            out_dir: None,
        }
    }
}

fn as_f64(v: &Value, line: Option<usize>, key: &str) -> Result<f64, ConfigError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(line, key, "expected a finite number"))
}

fn as_uint(v: &Value, line: Option<usize>, key: &str) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| err(line, key, "expected a non-negative integer"))
}

fn as_f64_list(v: &Value, line: Option<usize>, key: &str) -> Result<Vec<f64>, ConfigError> {
    v.as_array()
        .ok_or_else(|| err(line, key, "expected an array of numbers"))?
        .iter()
        .map(|x| as_f64(x, line, key))
        .collect()
}

fn parse_value(raw: &str) -> Value {
    // bare words such as 0:1:10 or out/run are taken as strings
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Parses `key = value` text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| err(Some(i + 1), t, "expected `key = value`"))?;
            c.set(k.trim(), v.trim(), Some(i + 1))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let v = parse_value(raw);
        match key {
            "d" => self.d = as_uint(&v, line, key)? as usize,
            "omega" => self.omega = Some(as_f64_list(&v, line, key)?),
            "gamma" => self.gamma = as_f64(&v, line, key)?,
            "tau" => self.tau = as_f64(&v, line, key)?,
            "eps" => self.eps = as_f64(&v, line, key)?,
            "modes" => {
                let arr = v.as_array().ok_or_else(|| err(line, key, "expected an array of modes"))?;
                self.modes = arr.iter().map(|m| as_f64_list(m, line, key)).collect::<Result<_, _>>()?;
            }
            "radius" => self.radius = as_f64(&v, line, key)?,
            "sites" => self.sites = as_uint(&v, line, key)? as usize,
            "theta0" => self.theta0 = Some(as_f64_list(&v, line, key)?),
            "sigma" => self.sigma = as_f64(&v, line, key)?,
            "eps0" => self.eps0 = Some(as_f64(&v, line, key)?),
            "j_max" => self.j_max = as_uint(&v, line, key)? as usize,
            "n_min" => self.n_min = as_uint(&v, line, key)? as u32,
            "t_max" => self.t_max = as_f64(&v, line, key)?,
            "t_min" => self.t_min = Some(as_f64(&v, line, key)?),
            "samples" => self.samples = as_uint(&v, line, key)? as usize,
            "dt" => self.dt = as_f64(&v, line, key)?,
            "lambda" => self.lambda = as_f64(&v, line, key)?,
            "kappa" => self.kappa = as_uint(&v, line, key)? as u32,
            "zeta" => self.zeta = as_f64(&v, line, key)?,
            "egrid" => {
                let s = v.as_str().ok_or_else(|| err(line, key, "expected lo:hi:count"))?;
                self.egrid = Grid::parse(s).map_err(|m| err(line, key, m))?;
            }
            "mlist" => self.mlist = as_f64_list(&v, line, key)?,
            "iterations" => self.iterations = as_uint(&v, line, key)? as usize,
            "window" => self.window = as_uint(&v, line, key)? as i64,
            "seed" => self.seed = as_uint(&v, line, key)?,
            "out_dir" => {
                let s = v.as_str().ok_or_else(|| err(line, key, "expected a path"))?;
                self.out_dir = Some(s.to_string());
            }
            _ => return Err(err(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(err(None, field, msg)) };
        check((1..=4).contains(&self.d), "d", "must be 1..=4")?;
        if let Some(w) = &self.omega {
            check(w.len() == self.d, "omega", "length must equal d")?;
        } else {
            check(self.d == 1, "omega", "required when d > 1")?;
        }
        check(self.gamma > 0.0, "gamma", "must be positive")?;
        check(self.tau > (self.d as f64 - 1.0).max(0.0), "tau", "must exceed d - 1")?;
        check(self.eps.abs() < 0.5, "eps", "amplitude must satisfy |eps| < 1/2")?;
        for m in &self.modes {
            check(m.len() == self.d + 1, "modes", "each mode is [k_1, ..., k_d, coefficient]")?;
            check(m[..self.d].iter().all(|k| k.fract() == 0.0), "modes", "wave numbers must be integers")?;
        }
        check(self.radius > 0.0, "radius", "must be positive")?;
        check((3..=16384).contains(&self.sites), "sites", "must be in 3..=16384")?;
        if let Some(t) = &self.theta0 {
            check(t.len() == self.d, "theta0", "length must equal d")?;
        }
        check(self.sigma > 0.0 && self.sigma < 1.0, "sigma", "must lie in (0, 1)")?;
        if let Some(e) = self.eps0 {
            check(e > 0.0 && e < 1.0, "eps0", "must lie in (0, 1)")?;
        }
        check((1..=12).contains(&self.j_max), "j_max", "must be 1..=12")?;
        check(self.n_min >= 1, "n_min", "must be positive")?;
        check(self.t_max > 0.0, "t_max", "must be positive")?;
        check(self.t_min() > 0.0 && self.t_min() < self.t_max, "t_min", "must lie in (0, t_max)")?;
        check(self.samples >= 2, "samples", "need at least two")?;
        check(self.dt > 0.0 && self.dt <= self.t_max, "dt", "must lie in (0, t_max]")?;
        check(self.kappa >= 1, "kappa", "must be at least 1")?;
        check(self.zeta > 0.0 && self.zeta < 1.0 / 3.0, "zeta", "must lie in (0, 1/3)")?;
        check(!self.mlist.is_empty(), "mlist", "must not be empty")?;
        check(self.iterations >= 1, "iterations", "must be positive")?;
        check(self.window >= 1, "window", "must be positive")?;
        let p = self.potential().map_err(|e| err(None, "modes", e.to_string()))?;
        check(kgqp::model::strip_norm(&p) < 1.0, "eps", "strip norm must stay below 1 so that V = 1 + P > 0")?;
        Ok(())
    }

    /// Validation specific to the Duhamel iteration.
    pub fn validate_duhamel(&self) -> Result<(), ConfigError> {
        let k = self.kappa as f64;
        if self.kappa <= 5 {
            return Err(err(None, "kappa", "the fixed point needs kappa > 5"));
        }
        if !(1.0 / (k - 2.0) < self.zeta && self.zeta < 1.0 / 3.0) {
            return Err(err(None, "zeta", format!("needs 1/(kappa - 2) < zeta < 1/3 with kappa = {}", self.kappa)));
        }
        Ok(())
    }

    pub fn frequency(&self) -> kgqp::Result<FrequencyVector> {
        match &self.omega {
            None => Ok(FrequencyVector::golden()),
            Some(w) => FrequencyVector::new(w.clone(), self.gamma, self.tau),
        }
    }

    pub fn potential(&self) -> kgqp::Result<QuasiPeriodicPotential> {
        if self.modes.is_empty() {
            if self.eps == 0.0 {
                return Ok(QuasiPeriodicPotential::zero(self.d));
            }
            return QuasiPeriodicPotential::cosine(self.d, self.eps, self.radius);
        }
        let coeffs: Vec<(Vec<i64>, f64)> = self
            .modes
            .iter()
            .map(|m| (m[..self.d].iter().map(|k| *k as i64).collect(), m[self.d]))
            .collect();
        QuasiPeriodicPotential::new(self.d, self.radius, coeffs)
    }

    pub fn t_min(&self) -> f64 {
        self.t_min.unwrap_or_else(|| (self.t_max / 10.0).min(10.0))
    }

    pub fn theta(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| vec![0.0; self.d])
    }

    pub fn lattice(&self) -> kgqp::Result<LatticeConfig> {
        LatticeConfig::new(self.sites, self.theta())
    }

    pub fn schedule(&self) -> kgqp::Result<KamSchedule> {
        let eps0 = match self.eps0 {
            Some(e) => e,
            None => {
                let s = kgqp::model::strip_norm(&self.potential()?);
                if s > 0.0 {
                    s
                } else {
                    0.1
                }
            }
        };
        make_schedule(eps0, self.sigma, self.j_max, self.n_min)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn values_and_errors() {
        let c = ExperimentConfig::parse("eps = 1e-3\negrid = -1:1:5\nmlist = [0, 5]\n").unwrap();
        assert_eq!(c.eps, 1e-3);
        assert_eq!(c.egrid.linear(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(c.mlist, vec![0.0, 5.0]);
        let e = ExperimentConfig::parse("eps = 0\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.field, "bogus");
        assert!(ExperimentConfig::parse("eps = 1.5").is_err());
        assert!(ExperimentConfig::parse("modes = [[1, 0.6], [-1, 0.6]]").is_err());
        assert!(ExperimentConfig::parse("sites = -3").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
        let k4 = ExperimentConfig::parse("kappa = 4\nzeta = 0.32").unwrap();
        assert!(k4.validate_duhamel().is_err());
        assert!(ExperimentConfig::parse("").unwrap().validate_duhamel().is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse("eps = 1e-3").unwrap();
        let b = ExperimentConfig::parse("eps = 0.001").unwrap();
        let c = ExperimentConfig::parse("eps = 0.002").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
