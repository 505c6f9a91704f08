//! Monte Carlo drift certificates for `Phi^n` and moment estimates under the
//! long-run distribution.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{build_mode_flows, run_observed, stationary_samples, Stepper, StepperConfig};
use crate::model::{big_phi, generator_terms, ModelSpec, State};
use crate::quad::cumulative_trapezoid;
use crate::stats::{bootstrap_ci, median_of_means, par_paths};

/// Drift-verification grid spacing in time units.
pub const GRID_SPACING: f64 = 0.1;
pub const MOM_BLOCKS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub n: u32,
    pub gamma: f64,
    pub n_paths: usize,
    pub phi0_n: f64,
    pub times: Vec<f64>,
    /// Median-of-means estimate of `E Phi^n(U(t))`.
    pub e_phi_n: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `E Phi^{n-1+gamma}(U(t))`.
    pub e_phi_pow: Vec<f64>,
    /// Trapezoid integral of `e_phi_pow` from 0 to t.
    pub running_integral: Vec<f64>,
    /// `max_t [(E Phi^n(t) - Phi^n(U0)) / t]^+` using upper confidence values.
    pub fitted_constant: f64,
    /// `C = 2 (Tr(QAQ*) + fitted_constant)`.
    pub big_c: f64,
    /// Largest `c` with `E Phi^n(t) + c I(t) <= Phi^n(U0) + C t` on the grid.
    pub c_max: f64,
    pub feasible: bool,
}

/// `Phi(U(t))` on the 0.1 grid for each path.
#[derive(Clone, Debug)]
pub struct PhiPaths {
    pub phi0: f64,
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    pub trace_qaq: f64,
    pub lambda: f64,
}

pub fn phi_paths(u0: &State, t_end: f64, n_paths: usize, spec: &ModelSpec, cfg: &StepperConfig) -> Result<PhiPaths> {
    cfg.validate(spec)?;
    let every = (GRID_SPACING / cfg.dt).round() as u64;
    if every == 0 || ((every as f64) * cfg.dt - GRID_SPACING).abs() > 1e-9 {
        return Err(Error::Config(format!("dt = {} does not divide the grid spacing {GRID_SPACING}", cfg.dt)));
    }
    let count = (t_end / GRID_SPACING).round() as usize + 1;
    let flows = Arc::new(build_mode_flows(spec, cfg.dt));
    let paths = par_paths(n_paths, |p| {
        let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
        let mut phis = Vec::with_capacity(count);
        run_observed(&mut st, u0, p, every, count, |_, s| {
            let phi = big_phi(spec, s).map_err(|e| Error::Blowup { path: p, reason: e.to_string() })?;
            phis.push(phi);
            Ok(())
        })?;
        Ok(phis)
    })?;
    Ok(PhiPaths {
        phi0: big_phi(spec, u0)?,
        times: (0..count).map(|i| i as f64 * every as f64 * cfg.dt).collect(),
        paths,
        trace_qaq: spec.trace_qaq(),
        lambda: spec.nonlinearity().lambda(),
    })
}

/// Estimate `E Phi^n(U(t))` on a grid of spacing 0.1 up to `t_end` and fit
/// the drift constants.
pub fn drift_verify(
    u0: &State,
    n: u32,
    gamma: f64,
    t_end: f64,
    n_paths: usize,
    spec: &ModelSpec,
    cfg: &StepperConfig,
) -> Result<DriftReport> {
    check_exponents(n, gamma, spec.nonlinearity().lambda())?;
    drift_report(&phi_paths(u0, t_end, n_paths, spec, cfg)?, n, gamma)
}

fn check_exponents(n: u32, gamma: f64, lambda: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0 / lambda) {
        return Err(Error::Config(format!("gamma = {gamma} outside (0, 1/lambda) = (0, {})", 1.0 / lambda)));
    }
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    Ok(())
}

/// Drift fit for one `(n, gamma)` from simulated paths.
pub fn drift_report(data: &PhiPaths, n: u32, gamma: f64) -> Result<DriftReport> {
    check_exponents(n, gamma, data.lambda)?;
    let times = data.times.clone();
    let count = times.len();
    let paths = &data.paths;
    let phi0_n = data.phi0.powi(n as i32);
    let q = n as f64 - 1.0 + gamma;
    let mut e_phi_n = Vec::with_capacity(count);
    let mut stderr = Vec::with_capacity(count);
    let mut e_phi_pow = Vec::with_capacity(count);
    for i in 0..count {
        let a: Vec<f64> = paths.iter().map(|p| p[i].powi(n as i32)).collect();
        let b: Vec<f64> = paths.iter().map(|p| p[i].powf(q)).collect();
        let (m, se) = median_of_means(&a, MOM_BLOCKS);
        e_phi_n.push(m);
        stderr.push(se);
        e_phi_pow.push(median_of_means(&b, MOM_BLOCKS).0);
    }
    let running_integral = cumulative_trapezoid(&times, &e_phi_pow);
    let upper: Vec<f64> = e_phi_n.iter().zip(&stderr).map(|(m, s)| m + 3.0 * s).collect();
    let mut fitted: f64 = 0.0;
    for i in 1..count {
        fitted = fitted.max((upper[i] - phi0_n) / times[i]);
    }
    let big_c = 2.0 * (data.trace_qaq + fitted);
    let mut c_max = f64::INFINITY;
    for i in 1..count {
        if running_integral[i] > 0.0 {
            c_max = c_max.min((phi0_n + big_c * times[i] - upper[i]) / running_integral[i]);
        }
    }
    if !c_max.is_finite() {
        c_max = 0.0;
    }
    Ok(DriftReport {
        n,
        gamma,
        n_paths: paths.len(),
        phi0_n,
        times,
        e_phi_n,
        stderr,
        e_phi_pow,
        running_integral,
        fitted_constant: fitted,
        big_c,
        c_max,
        feasible: c_max > 0.0,
    })
}

impl DriftReport {
    /// Check `E Phi^n(t) + c I(t) <= Phi^n(U0) + C t` at every grid time.
    pub fn holds_with(&self, c: f64, big_c: f64) -> bool {
        self.times.iter().enumerate().all(|(i, t)| {
            self.e_phi_n[i] + c * self.running_integral[i] <= self.phi0_n + big_c * t + 1e-12 * self.phi0_n.max(1.0)
        })
    }
}

/// Fitted envelope `L Phi <= -c Phi^gamma + C` over sampled states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope {
    pub c: f64,
    pub big_c: f64,
    pub feasible: bool,
}

/// Linear program in `(c, C)` over samples `(Phi, L Phi)`: fix
/// `C = 2 max(max L Phi, Tr)` and return the largest feasible `c`.
pub fn envelope_fit(samples: &[(f64, f64)], gamma: f64, trace: f64) -> Envelope {
    let top = samples.iter().map(|s| s.1).fold(trace, f64::max);
    let big_c = 2.0 * top.max(0.0);
    let mut c = f64::INFINITY;
    for &(phi, l) in samples {
        if phi > 0.0 {
            c = c.min((big_c - l) / phi.powf(gamma));
        }
    }
    let feasible = c.is_finite() && c > 0.0 && samples.iter().all(|&(p, l)| l <= -c * p.powf(gamma) + big_c * (1.0 + 1e-12));
    Envelope { c, big_c, feasible }
}

/// `(Phi, L Phi)` for states sampled at `Phi` levels spread log-uniformly over
/// `[lo, hi]` (plus the origin).
pub fn generator_samples(spec: &ModelSpec, count: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(count + 1);
    let t = generator_terms(spec, &spec.zero_state())?;
    out.push((t.phi, t.drift));
    for i in 0..count as u64 {
        let decay = 0.5 + 1.5 * ((i as f64 * 0.618_034) % 1.0);
        let dir = State::random(spec.modes(), spec.length(), seed, i, 1.0, decay);
        let frac = (i as f64 + 0.5) / count as f64;
        let level = lo * (hi / lo).powf(frac);
        let s = crate::coupling::scale_to_level(spec, &dir, level)?;
        let t = generator_terms(spec, &s)?;
        out.push((t.phi, t.drift));
    }
    Ok(out)
}

/// `||u||_{H^2} + ||v||_{H^1} + ||v||^{lambda+1}_{L^{lambda+1}}`.
pub fn moment_observable(spec: &ModelSpec, s: &State) -> Result<f64> {
    let p = spec.nonlinearity().lambda() + 1.0;
    let lp = spec.basis().lebesgue_norm(s.v.coeffs(), p)?;
    Ok(s.u.sobolev_norm_sq(2.0).sqrt() + s.v.sobolev_norm_sq(1.0).sqrt() + lp.powf(p))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentPlan {
    pub burn_in: f64,
    pub chains: usize,
    pub thin: f64,
    pub n_samples: usize,
    pub bootstrap_reps: usize,
}

impl Default for MomentPlan {
    fn default() -> Self {
        Self { burn_in: 50.0, chains: 8, thin: 5.0, n_samples: 256, bootstrap_reps: 1000 }
    }
}

/// Observable values `X` on long-run samples for the given seed.
pub fn invariant_observables(spec: &ModelSpec, cfg: &StepperConfig, plan: &MomentPlan) -> Result<Vec<f64>> {
    let states = stationary_samples(spec, cfg, plan.chains, plan.burn_in, plan.thin, plan.n_samples)?;
    states.iter().map(|s| moment_observable(spec, s)).collect()
}

/// `E X^p` with a 95% percentile bootstrap interval.
pub fn moment_from_observables(xs: &[f64], p: f64, seed: u64, reps: usize) -> MomentEstimate {
    let powered: Vec<f64> = xs.iter().map(|x| x.powf(p)).collect();
    let mean = powered.iter().sum::<f64>() / powered.len() as f64;
    let (lo, hi) = bootstrap_ci(powered.len(), reps, 0.95, seed ^ 0xb007, |idx| {
        idx.iter().map(|&i| powered[i]).sum::<f64>() / idx.len() as f64
    });
    MomentEstimate { p, seed, n_samples: xs.len(), estimate: mean, ci_lo: lo, ci_hi: hi }
}

pub fn invariant_moment_estimate(spec: &ModelSpec, cfg: &StepperConfig, plan: &MomentPlan, p: f64) -> Result<MomentEstimate> {
    let xs = invariant_observables(spec, cfg, plan)?;
    Ok(moment_from_observables(&xs, p, cfg.seed, plan.bootstrap_reps))
}

/// Two independent seeds; `agree` when the 95% intervals overlap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentComparison {
    pub first: MomentEstimate,
    pub second: MomentEstimate,
    pub agree: bool,
}

pub fn compare_moments(a: MomentEstimate, b: MomentEstimate) -> MomentComparison {
    let agree = a.ci_lo <= b.ci_hi && b.ci_lo <= a.ci_hi;
    MomentComparison { first: a, second: b, agree }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NoiseSpec, Nonlinearity};
    use std::f64::consts::PI;

    #[test]
    fn noiseless_linear_drift_is_feasible_without_constant() {
        let spec = ModelSpec::default_model()
            .with_noise(NoiseSpec::zero(64))
            .unwrap()
            .with_nonlinearity(Nonlinearity::Zero);
        let u0 = spec.mode_state(1, 1.0);
        let r = drift_verify(&u0, 1, 0.25, 5.0, 2, &spec, &StepperConfig::new(0.01, 0)).unwrap();
        assert!(r.e_phi_n.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        assert_eq!(r.fitted_constant, 0.0);
        assert_eq!(r.big_c, 0.0);
        assert!(r.feasible && r.c_max > 0.0);
        assert!(r.holds_with(r.c_max, 0.0));
        assert!(r.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn drift_report_shapes() {
        let spec = ModelSpec::default_model();
        let r = drift_verify(&spec.zero_state(), 2, 0.25, 1.0, 32, &spec, &StepperConfig::new(0.01, 4)).unwrap();
        assert_eq!(r.times.len(), 11);
        assert!((r.times[10] - 1.0).abs() < 1e-12);
        assert!(r.running_integral.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.e_phi_n.iter().all(|&x| x >= 0.0));
        assert!(r.feasible);
        assert!(r.holds_with(r.c_max, r.big_c));
    }

    #[test]
    fn gamma_range_enforced() {
        let spec = ModelSpec::default_model();
        let cfg = StepperConfig::new(0.01, 0);
        assert!(drift_verify(&spec.zero_state(), 1, 0.4, 1.0, 2, &spec, &cfg).is_err());
        assert!(drift_verify(&spec.zero_state(), 1, 0.25, 1.0, 2, &spec, &StepperConfig::new(0.03, 0)).is_err());
    }

    #[test]
    fn drift_envelope_over_sampled_states() {
        let spec = ModelSpec::default_model();
        let samples = generator_samples(&spec, 2000, 1e-3, 1e4, 5).unwrap();
        let env = envelope_fit(&samples, 0.25, spec.trace_qaq());
        assert!(env.feasible, "{env:?}");
        assert!(env.c > 0.0);
    }

    #[test]
    fn noiseless_moments_vanish() {
        let spec = ModelSpec::default_model().with_noise(NoiseSpec::zero(64)).unwrap();
        let plan = MomentPlan { burn_in: 20.0, chains: 2, thin: 1.0, n_samples: 4, bootstrap_reps: 50 };
        let m = invariant_moment_estimate(&spec, &StepperConfig::new(0.01, 0), &plan, 2.0).unwrap();
        assert_eq!(m.estimate, 0.0);
    }

    #[test]
    fn moment_ordering() {
        let xs: Vec<f64> = (0..100).map(|i| 0.1 + (i as f64 * 0.37) % 2.0).collect();
        let m2 = moment_from_observables(&xs, 2.0, 1, 100);
        let m4 = moment_from_observables(&xs, 4.0, 1, 100);
        assert!(m2.estimate <= m4.estimate.sqrt() * (1.0 + 1e-12));
        assert!(m2.ci_lo <= m2.estimate && m2.estimate <= m2.ci_hi);
        let cmp = compare_moments(m2.clone(), m2);
        assert!(cmp.agree);
    }

    #[test]
    fn observable_of_first_mode() {
        let spec = ModelSpec::default_model();
        let mut s = spec.mode_state(1, 2.0);
        s.v.coeffs_mut()[0] = 1.0;
        let x = moment_observable(&spec, &s).unwrap();
        let l4 = 3.0 / (2.0 * PI);
        assert!((x - (2.0 + 1.0 + l4)).abs() < 1e-12);
    }
}
