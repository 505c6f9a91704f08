//! Synchronous coupling: two copies of the dynamics driven by one noise path.
//!
//! A pair is stored as the primary state `U` and the difference
//! `D = U - U~`. The difference obeys a noise-free equation, so it is
//! propagated directly and never suffers cancellation against the noise when
//! `D` has contracted many orders of magnitude below `U`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{linear_flow, NoiseSource, Splitting, Stepper, StepperConfig};
use crate::model::{big_phi, ModelSpec, State};
use crate::stats::{fit_line, mean_se, par_paths};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingConfig {
    /// Weight of the cross term in `||u||^2_{H^1} + ||v||^2 + eps <u, v>`.
    pub epsilon: f64,
    pub horizon: f64,
    pub sample_every: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, horizon: 100.0, sample_every: 1.0 }
    }
}

impl CouplingConfig {
    /// The cross-weighted form is positive definite for `eps < 2 min(alpha_1, 1)`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let limit = 2.0 * spec.eigenvalues()[0].min(1.0);
        if !(self.epsilon > 0.0) || self.epsilon >= limit {
            return Err(Error::Config(format!(
                "epsilon = {} outside (0, {limit}) required for positivity",
                self.epsilon
            )));
        }
        if !(self.horizon >= 0.0) || !(self.sample_every > 0.0) {
            return Err(Error::Config("horizon and sampling interval must be positive".into()));
        }
        Ok(())
    }
}

/// `||u||^2_{H^1} + ||v||^2_H + eps <u, v>_H`.
pub fn eps_functional(s: &State, eps: f64) -> f64 {
    s.energy() + eps * s.u.sobolev_inner(&s.v, 0.0)
}

/// Constants `(1 - eps/(2m), 1 + eps/(2m))`, `m = min(alpha_1, 1)`, bracketing
/// the cross-weighted form by the plain energy.
pub fn quadratic_form_bounds(eps: f64, alpha1: f64) -> (f64, f64) {
    let r = eps / (2.0 * alpha1.min(1.0));
    (1.0 - r, 1.0 + r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub primary: State,
    pub diff: State,
    pub step: u64,
}

impl CoupledPair {
    pub fn new(u: &State, u_tilde: &State) -> Result<Self> {
        if u.modes() != u_tilde.modes() {
            return Err(Error::Shape { expected: u.modes(), got: u_tilde.modes() });
        }
        Ok(Self { primary: u.clone(), diff: u.difference(u_tilde), step: 0 })
    }

    pub fn partner(&self) -> State {
        self.primary.difference(&self.diff)
    }

    /// `d(U, U~) = ||u - u~||^2_{H^1} + ||v - v~||^2_H`.
    pub fn distance(&self) -> f64 {
        self.diff.energy()
    }

    pub fn time(&self, dt: f64) -> f64 {
        self.step as f64 * dt
    }
}

/// Advance both members with the same noise increments.
pub fn couple_step(pair: &mut CoupledPair, stepper: &mut Stepper, noise: &mut dyn NoiseSource) -> Result<()> {
    let h = stepper.dt();
    let n = pair.step;
    let mut incs = std::mem::take(stepper.buffers().0);
    noise.increments(n, &mut incs);
    let split = stepper.config().splitting;
    let sub = if split == Splitting::Strang { 0.5 * h } else { h };
    stepper.damp_pair(pair.primary.v.coeffs_mut(), pair.diff.v.coeffs_mut(), sub);
    stepper.linear(&mut pair.primary, &incs, 1.0);
    let flows = stepper.flows().clone();
    linear_flow(&flows, pair.diff.u.coeffs_mut(), pair.diff.v.coeffs_mut(), None);
    if split == Splitting::Strang {
        stepper.damp_pair(pair.primary.v.coeffs_mut(), pair.diff.v.coeffs_mut(), sub);
    }
    *stepper.buffers().0 = incs;
    pair.step += 1;
    if !pair.primary.is_finite() || !pair.diff.is_finite() {
        return Err(Error::Integration { step: n, reason: "coupled pair became non-finite".into() });
    }
    Ok(())
}

/// Per-step distance record of one coupled run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairTrace {
    pub dt: f64,
    pub distances: Vec<f64>,
    pub velocity_sq: Vec<f64>,
}

/// Run a pair for `steps` steps, recording `d` before the first and after
/// every step.
pub fn run_pair(stepper: &mut Stepper, u: &State, u_tilde: &State, path: u64, steps: u64) -> Result<PairTrace> {
    let mut pair = CoupledPair::new(u, u_tilde)?;
    let mut noise = stepper.noise(path);
    let mut d = Vec::with_capacity(steps as usize + 1);
    let mut vv = Vec::with_capacity(steps as usize + 1);
    d.push(pair.distance());
    vv.push(pair.diff.v.sobolev_norm_sq(0.0));
    for _ in 0..steps {
        couple_step(&mut pair, stepper, &mut noise)?;
        d.push(pair.distance());
        vv.push(pair.diff.v.sobolev_norm_sq(0.0));
    }
    Ok(PairTrace { dt: stepper.dt(), distances: d, velocity_sq: vv })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonexpansiveReport {
    pub steps: usize,
    pub violations: usize,
    /// Largest `d_{i+1} - d_i` (negative when every step contracts).
    pub max_increase: f64,
    pub tolerance: f64,
}

/// Count per-step increases of the coupled distance beyond `tol`.
pub fn nonexpansive_check(distances: &[f64], tol: f64) -> NonexpansiveReport {
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    for w in distances.windows(2) {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > tol {
            violations += 1;
        }
    }
    NonexpansiveReport {
        steps: distances.len().saturating_sub(1),
        violations,
        max_increase: if distances.len() < 2 { 0.0 } else { max_increase },
        tolerance: tol,
    }
}

/// Monte Carlo decay curve of the cross-weighted difference functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayCurve {
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    /// Fitted `r` in `mean ~ exp(-r t)` over `[T/2, T]`.
    pub rate: Option<f64>,
    pub rate_se: Option<f64>,
    pub degenerate: bool,
}

pub fn contraction_estimate(
    u0: &State,
    u0_tilde: &State,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    coupling: &CouplingConfig,
    n_paths: usize,
) -> Result<DecayCurve> {
    coupling.validate(spec)?;
    cfg.validate(spec)?;
    let every = (coupling.sample_every / cfg.dt).round() as u64;
    let samples = (coupling.horizon / coupling.sample_every).round() as usize;
    if every == 0 {
        return Err(Error::Config("sampling interval shorter than dt".into()));
    }
    let times: Vec<f64> = (0..=samples).map(|i| i as f64 * every as f64 * cfg.dt).collect();
    let eps = coupling.epsilon;
    if u0 == u0_tilde {
        return Ok(DecayCurve {
            epsilon: eps,
            mean: vec![0.0; times.len()],
            stderr: vec![0.0; times.len()],
            times,
            n_paths,
            rate: None,
            rate_se: None,
            degenerate: true,
        });
    }
    let flows = std::sync::Arc::new(crate::integrator::build_mode_flows(spec, cfg.dt));
    let curves = par_paths(n_paths, |p| {
        let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
        let mut noise = st.noise(p);
        let mut pair = CoupledPair::new(u0, u0_tilde)?;
        let mut out = Vec::with_capacity(samples + 1);
        out.push(eps_functional(&pair.diff, eps));
        for _ in 0..samples {
            for _ in 0..every {
                couple_step(&mut pair, &mut st, &mut noise)
                    .map_err(|e| Error::Blowup { path: p, reason: e.to_string() })?;
            }
            out.push(eps_functional(&pair.diff, eps));
        }
        Ok(out)
    })?;
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let (m, se) = mean_se(&col);
        mean.push(m);
        stderr.push(se);
    }
    let t_end = *times.last().unwrap_or(&0.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&mean)
        .filter(|(t, m)| **t >= 0.5 * t_end && **m > 0.0)
        .map(|(t, m)| (*t, m.ln()))
        .unzip();
    let fit = fit_line(&xs, &ys, None);
    Ok(DecayCurve {
        epsilon: eps,
        times,
        mean,
        stderr,
        n_paths,
        rate: fit.map(|f| -f.slope),
        rate_se: fit.map(|f| f.slope_se),
        degenerate: false,
    })
}

/// Empirical d-small certificate over sampled pairs in `{Phi^n <= R}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DSmallCertificate {
    pub radius: f64,
    pub n: u32,
    pub t: f64,
    pub rho_hat: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub n_paths: usize,
    /// Pairs skipped because both members coincide.
    pub excluded: usize,
    pub certified: bool,
}

/// Scale `direction` so that `Phi(s * direction) = level` (bisection; `Phi`
/// increases along rays).
pub fn scale_to_level(spec: &ModelSpec, direction: &State, level: f64) -> Result<State> {
    if level <= 0.0 {
        return Ok(spec.zero_state());
    }
    let f = |s: f64| big_phi(spec, &direction.scaled(s));
    let mut hi = 1.0;
    let mut guard = 0;
    while f(hi)? < level {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Config("cannot reach requested Phi level".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(direction.scaled(lo))
}

/// Random states with `Phi^n <= radius`, each at a level drawn uniformly in
/// `(0, radius^{1/n}]` along a random direction.
pub fn sample_in_sublevel(spec: &ModelSpec, radius: f64, n: u32, count: usize, seed: u64) -> Result<Vec<State>> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    let top = radius.powf(1.0 / n as f64);
    (0..count as u64)
        .map(|i| {
            let dir = State::random(spec.modes(), spec.length(), seed, i, 1.0, 1.5);
            let frac = ((i as f64 + 0.5) / count as f64 * 0.754_877_666).fract();
            let level = top * (0.05 + 0.95 * frac);
            let s = scale_to_level(spec, &dir, level)?;
            let phi = big_phi(spec, &s)?;
            if phi.powi(n as i32) > radius * (1.0 + 1e-12) {
                return Err(Error::Config("sampler left the sublevel set".into()));
            }
            Ok(s)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn dsmall_estimate(
    radius: f64,
    n: u32,
    t: f64,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    n_pairs: usize,
    n_paths: usize,
    seed: u64,
) -> Result<DSmallCertificate> {
    cfg.validate(spec)?;
    let states = sample_in_sublevel(spec, radius, n, 2 * n_pairs, seed)?;
    let steps = (t / cfg.dt).round() as u64;
    let flows = std::sync::Arc::new(crate::integrator::build_mode_flows(spec, cfg.dt));
    let mut worst: Option<(f64, f64)> = None;
    let mut excluded = 0;
    for i in 0..n_pairs {
        let (a, b) = (&states[2 * i], &states[2 * i + 1]);
        let d0 = CoupledPair::new(a, b)?.distance();
        if d0 == 0.0 {
            excluded += 1;
            continue;
        }
        let ratios = par_paths(n_paths, |p| {
            let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
            let mut noise = st.noise((i * n_paths) as u64 + p);
            let mut pair = CoupledPair::new(a, b)?;
            for _ in 0..steps {
                couple_step(&mut pair, &mut st, &mut noise)?;
            }
            Ok(pair.distance() / d0)
        })?;
        let (m, se) = mean_se(&ratios);
        if worst.is_none_or(|(w, _)| m > w) {
            worst = Some((m, se));
        }
    }
    let (m, se) = worst.ok_or_else(|| Error::Config("every sampled pair was degenerate".into()))?;
    let rho_hat = 1.0 - m;
    Ok(DSmallCertificate {
        radius,
        n,
        t,
        rho_hat,
        stderr: se,
        n_pairs,
        n_paths,
        excluded,
        certified: rho_hat > 3.0 * se && rho_hat > 0.0,
    })
}
