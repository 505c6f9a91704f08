//! Bookkeeping for the subgeometric rate: `psi_n`, the return-time function
//! `W_n`, the weighted distance, the one-step contraction factor, `g_n` and
//! the return schedule `m_k`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::integrator::{build_mode_flows, Stepper, StepperConfig};
use crate::model::{big_phi, ModelSpec, State};
use crate::stats::{mean_se, par_paths};
use crate::transport::cost;

/// Default cap on the number of `t0`-steps while waiting for a return.
pub const DEFAULT_RETURN_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub n: u32,
    pub gamma: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    pub cn_star: f64,
    #[serde(rename = "Cn_star")]
    pub big_cn_star: f64,
    pub t0: f64,
    pub radius: f64,
}

impl RateParams {
    pub fn new(n: u32, gamma: f64) -> Result<Self> {
        let p = Self { n, gamma, beta: 1.0, k1: 0.5, k2: 1.0, cn_star: 1.0, big_cn_star: 1.0, t0: 5.0, radius: 10.0 };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 4 {
            return Err(domain(format!("rate machinery needs n >= 4, got {}", self.n)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(domain(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        let positive = [self.k1, self.k2, self.cn_star, self.big_cn_star, self.t0, self.radius];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) || !(self.beta >= 0.0) {
            return Err(domain("rate constants must be positive and finite"));
        }
        Ok(())
    }

    /// Additionally require `gamma < 1/lambda`.
    pub fn check_for(&self, lambda: f64) -> Result<()> {
        self.check()?;
        if self.gamma >= 1.0 / lambda {
            return Err(domain(format!("gamma = {} must be below 1/lambda = {}", self.gamma, 1.0 / lambda)));
        }
        Ok(())
    }

    /// `p_n = (n - 1 + gamma) / n`.
    pub fn p(&self) -> f64 {
        (self.n as f64 - 1.0 + self.gamma) / self.n as f64
    }

    /// `(1 - p_n) / p_n`.
    fn q(&self) -> f64 {
        (1.0 - self.p()) / self.p()
    }

    pub fn exponent(&self) -> f64 {
        crate::transport::theoretical_exponent(self.n, self.gamma)
    }

    /// Time after which the polynomial bound applies.
    pub fn t_star(&self) -> f64 {
        2.0 * self.t0
    }

    /// `beta = rho1 / psi_n(R + 2 K2)`.
    pub fn with_rho1(mut self, rho1: f64) -> Self {
        self.beta = rho1 / psi_n(self.radius + 2.0 * self.k2, &self);
        self
    }
}

/// `psi_n(x) = |x|^{p_n}`.
pub fn psi_n(x: f64, params: &RateParams) -> f64 {
    x.abs().powf(params.p())
}

pub fn psi_n_inverse(y: f64, params: &RateParams) -> f64 {
    y.max(0.0).powf(1.0 / params.p())
}

pub fn psi_n_prime(x: f64, params: &RateParams) -> f64 {
    let p = params.p();
    p * x.abs().powf(p - 1.0)
}

/// `d_tilde = sqrt(d(U, V) (1 + beta psi_n(W(U) + W(V))))`.
pub fn d_tilde(u: &State, v: &State, params: &RateParams, w_u: f64, w_v: f64) -> Result<f64> {
    if w_u < 1.0 || w_v < 1.0 {
        return Err(domain(format!("W_n values must be at least 1, got ({w_u}, {w_v})")));
    }
    Ok(d_tilde_from(cost(u, v), params, w_u, w_v))
}

pub fn d_tilde_from(d: f64, params: &RateParams, w_u: f64, w_v: f64) -> f64 {
    (d * (1.0 + params.beta * psi_n(w_u + w_v, params))).sqrt()
}

fn check_unit(x: f64) -> Result<()> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(domain(format!("x = {x} outside (0, 1]")));
    }
    Ok(())
}

/// `g_n(x) = 3 / (4 c (1 - p)) ((C x^{-4/3})^q - C^q)`, `q = (1 - p) / p`.
pub fn g_n(x: f64, params: &RateParams) -> Result<f64> {
    check_unit(x)?;
    let (p, q) = (params.p(), params.q());
    let c = params.big_cn_star;
    let pre = 3.0 / (4.0 * params.cn_star * (1.0 - p));
    Ok(pre * c.powf(q) * (x.powf(-4.0 * q / 3.0) - 1.0))
}

pub fn g_n_inverse(y: f64, params: &RateParams) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(domain(format!("g_n inverse needs y >= 0, got {y}")));
    }
    let (p, q) = (params.p(), params.q());
    let scale = 4.0 * params.cn_star * (1.0 - p) / (3.0 * params.big_cn_star.powf(q));
    Ok((1.0 + y * scale).powf(-3.0 / (4.0 * q)))
}

/// Integrand whose integral over `[x, 1]` defines `g_n`.
pub fn g_n_integrand(t: f64, params: &RateParams) -> f64 {
    let arg = psi_n_inverse(params.big_cn_star * t.powf(-4.0 / 3.0), params);
    1.0 / (t * params.cn_star * psi_n_prime(arg, params))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContractionFactor {
    pub factor: f64,
    /// The raw value left `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// `1 - c psi_n'(psi_n^{-1}(C (m1 + m2)^{4/3} wd^{-4/3}))`, clamped to `[0, 1]`.
pub fn one_step_contraction_factor(params: &RateParams, m1: f64, m2: f64, wd: f64) -> Result<ContractionFactor> {
    if !(wd > 0.0) {
        return Err(domain("contraction factor undefined at wd = 0 (distributions coincide)"));
    }
    if m1 < 1.0 || m2 < 1.0 {
        return Err(domain(format!("moments must be at least 1, got ({m1}, {m2})")));
    }
    let arg = params.big_cn_star * (m1 + m2).powf(4.0 / 3.0) * wd.powf(-4.0 / 3.0);
    let raw = 1.0 - params.cn_star * psi_n_prime(psi_n_inverse(arg, params), params);
    let factor = raw.clamp(0.0, 1.0);
    Ok(ContractionFactor { factor, clamped: factor != raw || raw.is_nan() })
}

/// `a_0 = 1`, `a_{k+1} = (1 - c psi_n'(psi_n^{-1}(C a_k^{-4/3}))) a_k`.
pub fn contraction_recursion(params: &RateParams, steps: usize) -> Vec<f64> {
    let mut a = Vec::with_capacity(steps + 1);
    let mut x: f64 = 1.0;
    a.push(x);
    for _ in 0..steps {
        let arg = params.big_cn_star * x.powf(-4.0 / 3.0);
        x *= (1.0 - params.cn_star * psi_n_prime(psi_n_inverse(arg, params), params)).clamp(0.0, 1.0);
        a.push(x);
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundCheck {
    Holds,
    Violated,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MkSchedule {
    /// `m_1 < m_2 < ...`, one-based positions in the input.
    pub indices: Vec<usize>,
    /// Entry `k - 1` covers `m_k <= 2k`, for every k with `2k <= len`.
    pub bounds: Vec<BoundCheck>,
}

impl MkSchedule {
    pub fn all_hold(&self) -> bool {
        !self.bounds.contains(&BoundCheck::Violated)
    }
}

/// Positions `m` (from 1) with `values[m-1] <= 2 K2 + W`, and the `m_k <= 2k`
/// bound wherever the cumulative condition
/// `sum_{i=1}^{2k} values_i <= W + (2k + 1) K2` holds.
pub fn mk_schedule(values: &[f64], w: f64, k2: f64) -> Result<MkSchedule> {
    let threshold = 2.0 * k2 + w;
    if !(threshold > 0.0) {
        return Err(domain(format!("threshold 2 K2 + W = {threshold} must be positive")));
    }
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(domain("drift values must be nonnegative"));
    }
    let indices: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v <= threshold)
        .map(|(i, _)| i + 1)
        .collect();
    if indices.is_empty() {
        return Err(Error::Exhausted(format!("no return below {threshold} within {} steps", values.len())));
    }
    let mut bounds = Vec::with_capacity(values.len() / 2);
    let mut partial = 0.0;
    for k in 1..=values.len() / 2 {
        partial += values[2 * k - 2] + values[2 * k - 1];
        let check = if partial <= w + (2 * k + 1) as f64 * k2 {
            if indices.get(k - 1).is_some_and(|&m| m <= 2 * k) {
                BoundCheck::Holds
            } else {
                BoundCheck::Violated
            }
        } else {
            BoundCheck::NotApplicable
        };
        bounds.push(check);
    }
    Ok(MkSchedule { indices, bounds })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WnEstimate {
    /// `1 + E sum_{i=0}^{sigma} Phi(U(i t0))^n`.
    pub w: f64,
    pub w_stderr: f64,
    /// Same-path estimate of `P_{t0} W_n(U)`: the return sum restarted at index 1.
    pub pw: f64,
    pub pw_stderr: f64,
    pub mean_sigma: f64,
    pub censored_fraction: f64,
    pub unreliable: bool,
    pub phi_n0: f64,
    pub n_paths: usize,
    /// Per-path samples of `W` and `P_{t0} W`.
    #[serde(skip)]
    pub w_samples: Vec<f64>,
    #[serde(skip)]
    pub pw_samples: Vec<f64>,
}

/// Monte Carlo `W_n(u0)` by return times to `{Phi^n <= R}` on the `t0`
/// lattice, capped at `cap` lattice steps per path.
pub fn w_n_estimate(
    u0: &State,
    params: &RateParams,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    n_paths: usize,
    cap: usize,
) -> Result<WnEstimate> {
    cfg.validate(spec)?;
    let per = (params.t0 / cfg.dt).round() as u64;
    if per == 0 || ((per as f64) * cfg.dt - params.t0).abs() > 1e-9 * params.t0 {
        return Err(Error::Config(format!("t0 = {} is not a multiple of dt = {}", params.t0, cfg.dt)));
    }
    let n = params.n as i32;
    let radius = params.radius;
    let phi_n0 = big_phi(spec, u0)?.powi(n);
    let flows = Arc::new(build_mode_flows(spec, cfg.dt));
    // (sum from 0, sum from 1, sigma, censored)
    let runs = par_paths(n_paths, |p| {
        let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
        let mut noise = st.noise(p);
        let mut s = u0.clone();
        let mut step = 0u64;
        let mut total0 = phi_n0;
        let mut total1 = 0.0;
        let mut sigma0 = if phi_n0 <= radius { Some(0usize) } else { None };
        let mut sigma1 = None;
        let mut m = 0usize;
        while (sigma0.is_none() || sigma1.is_none()) && m < cap {
            for _ in 0..per {
                st.step(&mut s, &mut noise, step).map_err(|e| Error::Blowup { path: p, reason: e.to_string() })?;
                step += 1;
            }
            m += 1;
            let v = big_phi(spec, &s).map_err(|e| Error::Blowup { path: p, reason: e.to_string() })?.powi(n);
            if sigma0.is_none() {
                total0 += v;
            }
            if sigma1.is_none() {
                total1 += v;
            }
            if v <= radius {
                sigma0.get_or_insert(m);
                sigma1.get_or_insert(m);
            }
        }
        let censored = sigma0.is_none() || sigma1.is_none();
        Ok((1.0 + total0, 1.0 + total1, sigma0.unwrap_or(m) as f64, censored))
    })?;
    let w_samples: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let pw_samples: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (w, w_stderr) = mean_se(&w_samples);
    let (pw, pw_stderr) = mean_se(&pw_samples);
    let mean_sigma = runs.iter().map(|r| r.2).sum::<f64>() / n_paths.max(1) as f64;
    let censored_fraction = runs.iter().filter(|r| r.3).count() as f64 / n_paths.max(1) as f64;
    Ok(WnEstimate {
        w,
        w_stderr,
        pw,
        pw_stderr,
        mean_sigma,
        censored_fraction,
        unreliable: censored_fraction > 0.01,
        phi_n0,
        n_paths,
        w_samples,
        pw_samples,
    })
}

/// Drift `P_{t0} W <= W - psi_n(K1 W) + K2` fitted on one half of the paths
/// of each state and verified on the other half.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WnDriftFit {
    pub k1: f64,
    pub k2: f64,
    /// Per state: held-out `P W - W + psi(K1 W) - K2` and its standard error.
    pub residuals: Vec<(f64, f64)>,
    pub holds: bool,
}

pub fn fit_wn_drift(estimates: &[WnEstimate], params: &RateParams) -> WnDriftFit {
    let half = |xs: &[f64], first: bool| -> Vec<f64> {
        let m = xs.len() / 2;
        if first { xs[..m].to_vec() } else { xs[m..].to_vec() }
    };
    let excess = |w: &[f64], pw: &[f64]| -> (f64, f64) {
        let (mw, sw) = mean_se(w);
        let (mp, sp) = mean_se(pw);
        (mp - mw + psi_n(params.k1 * mw, params), (sw * sw + sp * sp).sqrt())
    };
    let k2 = estimates
        .iter()
        .map(|e| {
            let (x, se) = excess(&half(&e.w_samples, true), &half(&e.pw_samples, true));
            x + 3.0 * se
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let residuals: Vec<(f64, f64)> = estimates
        .iter()
        .map(|e| {
            let (x, se) = excess(&half(&e.w_samples, false), &half(&e.pw_samples, false));
            (x - k2, se)
        })
        .collect();
    let holds = residuals.iter().all(|(r, se)| *r <= 3.0 * se);
    WnDriftFit { k1: params.k1, k2, residuals, holds }
}

/// Persisted summary consumed by the mixing experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub rho1: f64,
    pub t0: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    pub cn_star: f64,
    #[serde(rename = "Cn_star")]
    pub big_cn_star: f64,
    pub n: u32,
    pub gamma: f64,
    pub exponent: f64,
}

impl RateCertificate {
    pub fn from_params(params: &RateParams, rho1: f64) -> Self {
        Self {
            rho1,
            t0: params.t0,
            radius: params.radius,
            k1: params.k1,
            k2: params.k2,
            cn_star: params.cn_star,
            big_cn_star: params.big_cn_star,
            n: params.n,
            gamma: params.gamma,
            exponent: params.exponent(),
        }
    }

    /// Parameters with `beta` chosen from `rho1`.
    pub fn params(&self) -> Result<RateParams> {
        let p = RateParams {
            n: self.n,
            gamma: self.gamma,
            beta: 0.0,
            k1: self.k1,
            k2: self.k2,
            cn_star: self.cn_star,
            big_cn_star: self.big_cn_star,
            t0: self.t0,
            radius: self.radius,
        };
        p.check()?;
        Ok(p.with_rho1(self.rho1))
    }
}
