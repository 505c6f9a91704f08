//! Flat `key = value` configuration with dotted keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::integrator::{Splitting, StepperConfig};
use crate::model::{ModelSpec, NoiseSpec, Nonlinearity, State};

/// `(key, default, meaning)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("L", "3.141592653589793", "domain length"),
    ("K", "64", "number of Galerkin modes"),
    ("phi.family", "power", "power | smooth_power | linear | zero"),
    ("phi.lambda", "3", "damping exponent"),
    ("phi.delta", "1", "smoothing scale of smooth_power"),
    ("phi.slope", "1", "slope of the linear family"),
    ("noise.amplitude", "1", "A0 in lambda_k = A0 k^-s"),
    ("noise.decay", "3", "s in lambda_k = A0 k^-s"),
    ("dim", "1", "spatial dimension used by the lambda-range check"),
    ("seed", "0", "master seed"),
    ("dt", "0.01", "time step"),
    ("splitting", "lie", "lie | strang"),
    ("u0.kind", "mode", "zero | mode | level"),
    ("u0.mode", "1", "mode index of the initial displacement"),
    ("u0.amplitude", "10", "coefficient of the initial displacement (kind = mode)"),
    ("u0.level", "10", "target Phi of the initial state (kind = level)"),
    ("n", "4", "power n of Phi^n"),
    ("gamma", "0.25", "drift exponent gamma"),
    ("validate.radius", "1000", "sample radius for sampled damping checks"),
    ("simulate.T", "1", "final time"),
    ("simulate.every", "0.1", "snapshot interval"),
    ("simulate.path", "0", "noise path index"),
    ("couple.epsilon", "0.05", "cross-term weight of the decay functional"),
    ("couple.T", "100", "horizon of the decay curve"),
    ("couple.every", "1", "sampling interval of the decay curve"),
    ("couple.paths", "64", "coupled pairs for the decay curve"),
    ("couple.partner.amplitude", "0", "mode-1 coefficient of the partner state"),
    ("dsmall.R", "10", "sublevel radius R of {Phi^n <= R}"),
    ("dsmall.t", "5", "coupling time"),
    ("dsmall.pairs", "50", "initial pairs sampled in the sublevel set"),
    ("dsmall.paths", "32", "noise paths per pair"),
    ("lyapunov.T", "50", "drift horizon"),
    ("lyapunov.paths", "256", "drift paths"),
    ("moments.p", "2", "moment order"),
    ("moments.burn_in", "50", "burn-in per chain"),
    ("moments.chains", "8", "independent chains"),
    ("moments.thin", "5", "thinning interval"),
    ("moments.samples", "256", "long-run samples"),
    ("moments.bootstrap", "1000", "bootstrap replicates"),
    ("mixing.times", "1,2,5,10,20,50", "comma-separated sample times"),
    ("mixing.samples", "128", "ensemble and reference size N"),
    ("mixing.bootstrap", "200", "bootstrap replicates per time"),
    ("mixing.burn_in", "500", "reference burn-in"),
    ("mixing.chains", "8", "reference chains"),
    ("mixing.thin", "5", "reference thinning"),
    ("rate.t0", "5", "lattice step t0"),
    ("rate.R", "10", "return radius R"),
    ("rate.K1", "0.5", "K1"),
    ("rate.K2", "1", "K2"),
    ("rate.cn_star", "1", "c_n*"),
    ("rate.Cn_star", "1", "C_n*"),
    ("rate.rho1", "0.1", "rho1 used for beta"),
    ("rate.paths", "64", "paths per W_n estimate"),
    ("rate.states", "20", "states for the W_n drift check"),
    ("rate.cap", "10000", "return-time cap in t0 steps"),
];

/// Resolved configuration: every key present, values kept as text so a
/// manifest reproduces them exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    /// Apply `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid list `{raw}` for `{key}`")))
            })
            .collect()
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let modes: usize = self.get("K")?;
        let lambda: f64 = self.get("phi.lambda")?;
        let nl = match self.raw("phi.family")? {
            "power" => Nonlinearity::power(lambda)?,
            "smooth_power" => Nonlinearity::smooth_power(lambda, self.get("phi.delta")?)?,
            "linear" => Nonlinearity::Linear { slope: self.get("phi.slope")? },
            "zero" => Nonlinearity::Zero,
            other => return Err(Error::Config(format!("unknown phi.family `{other}`"))),
        };
        let noise = NoiseSpec::power_law(self.get("noise.amplitude")?, self.get("noise.decay")?, modes)?;
        ModelSpec::new(self.get("L")?, modes, nl, noise)
    }

    pub fn stepper(&self) -> Result<StepperConfig> {
        let splitting: Splitting = self.get("splitting")?;
        Ok(StepperConfig::new(self.get("dt")?, self.get("seed")?).with_splitting(splitting))
    }

    pub fn initial_state(&self, spec: &ModelSpec) -> Result<State> {
        let k: usize = self.get("u0.mode")?;
        if k == 0 || k > spec.modes() {
            return Err(Error::Config(format!("u0.mode = {k} outside 1..={}", spec.modes())));
        }
        match self.raw("u0.kind")? {
            "zero" => Ok(spec.zero_state()),
            "mode" => Ok(spec.mode_state(k, self.get("u0.amplitude")?)),
            "level" => crate::coupling::scale_to_level(spec, &spec.mode_state(k, 1.0), self.get("u0.level")?),
            other => Err(Error::Config(format!("unknown u0.kind `{other}`"))),
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
