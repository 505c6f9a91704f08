//! The canonical experiments, their artifacts, and the command line.

pub mod cli;
pub mod config;
pub mod output;

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::coupling::{contraction_estimate, dsmall_estimate, nonexpansive_check, run_pair, scale_to_level, CouplingConfig};
use crate::error::{Error, Result};
use crate::integrator::{encode_snapshot, simulate, stationary_samples, uniform_times, Stepper, StepperConfig};
use crate::lyapunov::{compare_moments, drift_verify, invariant_moment_estimate, MomentPlan};
use crate::model::{big_phi, validate_with_radius, State};
use crate::ratekit::{
    contraction_recursion, fit_wn_drift, g_n, g_n_integrand, g_n_inverse, psi_n, w_n_estimate,
    RateCertificate, RateParams,
};
use crate::transport::{mixing_curve, MixingPlan};

pub use config::Config;
pub use output::{num, ArtifactWriter, RunManifest, MANIFEST, SCHEMA_VERSION};

pub const EXPERIMENTS: &[&str] = &["validate", "simulate", "couple", "lyapunov", "mixing", "ratekit-check"];

/// Result of a run: the manifest, a human-readable summary, and any
/// report-level violations (which are not errors).
#[derive(Clone, Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: String,
    pub violations: Vec<String>,
}

struct Run<'a> {
    cfg: &'a Config,
    out: ArtifactWriter,
    summary: String,
    violations: Vec<String>,
}

impl Run<'_> {
    fn note(&mut self, line: impl AsRef<str>) {
        self.summary.push_str(line.as_ref());
        self.summary.push('\n');
    }

    fn flag(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.violations.push(what.into());
        }
    }
}

/// Run experiment `name`, writing artifacts under `out_dir`. On failure the
/// artifacts written so far are removed.
pub fn run_experiment(name: &str, cfg: &Config, out_dir: &Path) -> Result<Outcome> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::Config(format!("unknown experiment `{name}`")));
    }
    let started = chrono::Utc::now().to_rfc3339();
    let mut run = Run { cfg, out: ArtifactWriter::new(out_dir)?, summary: String::new(), violations: Vec::new() };
    let result = match name {
        "validate" => validate(&mut run),
        "simulate" => simulate_run(&mut run),
        "couple" => couple(&mut run),
        "lyapunov" => lyapunov(&mut run),
        "mixing" => mixing(&mut run),
        _ => ratekit_check(&mut run),
    };
    if let Err(e) = result {
        run.out.abort();
        return Err(e);
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        experiment: name.to_string(),
        config: cfg.entries().clone(),
        seed: cfg.get("seed")?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: Default::default(),
    };
    let manifest = run.out.finish(manifest)?;
    Ok(Outcome { manifest, summary: run.summary, violations: run.violations })
}

fn report<T: Serialize>(body: T) -> serde_json::Value {
    let mut v = serde_json::to_value(body).unwrap_or_default();
    if let Some(map) = v.as_object_mut() {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    v
}

fn validate(run: &mut Run) -> Result<()> {
    let spec = run.cfg.model()?;
    let rep = validate_with_radius(&spec, run.cfg.get("dim")?, run.cfg.get("validate.radius")?);
    run.note(rep.to_string());
    run.flag(rep.is_valid(), "model assumptions violated");
    run.out.json("report.json", &report(json!({ "valid": rep.is_valid(), "report": rep })))?;
    Ok(())
}

fn simulate_run(run: &mut Run) -> Result<()> {
    let spec = run.cfg.model()?;
    let cfg = run.cfg.stepper()?;
    let u0 = run.cfg.initial_state(&spec)?;
    let times = uniform_times(run.cfg.get("simulate.T")?, run.cfg.get("simulate.every")?);
    let traj = simulate(&u0, &times, &spec, &cfg, run.cfg.get("simulate.path")?, 1.0)?;
    let samples: Vec<(f64, State)> = traj.times.iter().copied().zip(traj.states.iter().cloned()).collect();
    let digest = run.out.bytes("snapshot.bin", &encode_snapshot(&samples)?)?;
    let phis: Vec<f64> = traj.states.iter().map(|s| big_phi(&spec, s)).collect::<Result<_>>()?;
    run.out.csv(
        "trajectory.csv",
        &["t", "phi", "energy"],
        traj.times.iter().zip(&traj.states).zip(&phis).map(|((t, s), p)| vec![num(*t), num(*p), num(s.energy())]),
    )?;
    let d = &traj.diagnostics;
    run.out.json(
        "diagnostics.json",
        &report(json!({ "diagnostics": d, "ito_residual": d.residual(), "samples": samples.len() })),
    )?;
    run.note(format!("{} samples to t = {}, snapshot {digest}", samples.len(), times.last().unwrap_or(&0.0)));
    run.note(format!("pathwise energy-balance residual {:.3e}", d.residual()));
    Ok(())
}

fn couple(run: &mut Run) -> Result<()> {
    let c = run.cfg;
    let spec = c.model()?;
    let cfg = c.stepper()?;
    let u0 = c.initial_state(&spec)?;
    let partner = spec.mode_state(1, c.get("couple.partner.amplitude")?);
    let coupling = CouplingConfig { epsilon: c.get("couple.epsilon")?, horizon: c.get("couple.T")?, sample_every: c.get("couple.every")? };
    let curve = contraction_estimate(&u0, &partner, &spec, &cfg, &coupling, c.get("couple.paths")?)?;
    run.out.csv(
        "decay.csv",
        &["t", "mean", "stderr", "n_paths"],
        curve.times.iter().enumerate().map(|(i, t)| vec![num(*t), num(curve.mean[i]), num(curve.stderr[i]), curve.n_paths.to_string()]),
    )?;
    let target = coupling.epsilon / 8.0 * 0.8;
    let rate_ok = curve.degenerate || curve.rate.is_some_and(|r| r >= target);
    run.note(format!("decay rate {:?} (target >= {target})", curve.rate));
    run.flag(rate_ok, format!("decay rate {:?} below {target}", curve.rate));

    let mut st = Stepper::new(&spec, cfg)?;
    let steps = (coupling.horizon.min(20.0) / cfg.dt).round() as u64;
    let trace = run_pair(&mut st, &u0, &partner, 0, steps)?;
    let nonexp = nonexpansive_check(&trace.distances, 1e-8);
    run.flag(nonexp.violations == 0, format!("{} non-expansiveness violations", nonexp.violations));

    let (radius, n, t): (f64, u32, f64) = (c.get("dsmall.R")?, c.get("n")?, c.get("dsmall.t")?);
    let cert = dsmall_estimate(radius, n, t, &spec, &cfg, c.get("dsmall.pairs")?, c.get("dsmall.paths")?, cfg.seed)?;
    run.out.json("dsmall.json", &report(&cert))?;
    run.out.csv("dsmall.csv", &["R", "t", "rho_hat", "stderr"], [vec![num(radius), num(t), num(cert.rho_hat), num(cert.stderr)]])?;
    run.note(format!("d-small: rho_hat = {:.4} +- {:.4}, certified = {}", cert.rho_hat, cert.stderr, cert.certified));
    run.flag(cert.certified, "d-small certificate not established");
    run.out.json(
        "report.json",
        &report(json!({ "decay": {"epsilon": curve.epsilon, "rate": curve.rate, "rate_se": curve.rate_se, "target": target}, "nonexpansive": nonexp, "dsmall": cert })),
    )?;
    Ok(())
}

fn lyapunov(run: &mut Run) -> Result<()> {
    let c = run.cfg;
    let spec = c.model()?;
    let cfg = c.stepper()?;
    let u0 = c.initial_state(&spec)?;
    let (n, gamma): (u32, f64) = (c.get("n")?, c.get("gamma")?);
    let drift = drift_verify(&u0, n, gamma, c.get("lyapunov.T")?, c.get("lyapunov.paths")?, &spec, &cfg)?;
    run.out.csv(
        "drift.csv",
        &["t", "E_phi_n", "stderr", "running_integral"],
        drift.times.iter().enumerate().map(|(i, t)| vec![num(*t), num(drift.e_phi_n[i]), num(drift.stderr[i]), num(drift.running_integral[i])]),
    )?;
    run.note(format!("drift n = {n}, gamma = {gamma}: C = {:.4}, c_max = {:.4}, feasible = {}", drift.big_c, drift.c_max, drift.feasible));
    run.flag(drift.feasible, "drift inequality infeasible");

    let plan = MomentPlan {
        burn_in: c.get("moments.burn_in")?,
        chains: c.get("moments.chains")?,
        thin: c.get("moments.thin")?,
        n_samples: c.get("moments.samples")?,
        bootstrap_reps: c.get("moments.bootstrap")?,
    };
    let p: f64 = c.get("moments.p")?;
    let a = invariant_moment_estimate(&spec, &cfg, &plan, p)?;
    let b = invariant_moment_estimate(&spec, &StepperConfig { seed: cfg.seed.wrapping_add(1), ..cfg }, &plan, p)?;
    let cmp = compare_moments(a, b);
    run.note(format!(
        "moment p = {p}: {:.4} [{:.4}, {:.4}] vs {:.4} [{:.4}, {:.4}], agree = {}",
        cmp.first.estimate, cmp.first.ci_lo, cmp.first.ci_hi, cmp.second.estimate, cmp.second.ci_lo, cmp.second.ci_hi, cmp.agree
    ));
    run.flag(cmp.agree, "long-run moment estimates from two seeds disagree");
    run.out.json(
        "report.json",
        &report(json!({
            "n": n, "gamma": gamma, "fitted_constant": drift.fitted_constant, "C": drift.big_c,
            "c": drift.c_max, "feasible": drift.feasible, "n_paths": drift.n_paths, "moments": cmp
        })),
    )?;
    Ok(())
}

fn mixing(run: &mut Run) -> Result<()> {
    let c = run.cfg;
    let spec = c.model()?;
    let cfg = c.stepper()?;
    let u0 = c.initial_state(&spec)?;
    let times = c.list("mixing.times")?;
    let size: usize = c.get("mixing.samples")?;
    let (burn, chains, thin): (f64, usize, f64) = (c.get("mixing.burn_in")?, c.get("mixing.chains")?, c.get("mixing.thin")?);
    let reference = stationary_samples(&spec, &cfg, chains, burn, thin, size)?;
    let second = stationary_samples(&spec, &StepperConfig { seed: cfg.seed.wrapping_add(1), ..cfg }, chains, burn, thin, size)?;
    let plan = MixingPlan { n: c.get("n")?, gamma: c.get("gamma")?, bootstrap_reps: c.get("mixing.bootstrap")?, ..MixingPlan::default() };
    let curve = mixing_curve(&u0, &spec, &cfg, &times, &reference, Some(&second), &plan)?;
    run.out.csv(
        "mixing_curve.csv",
        &["t", "wd_hat", "ci_lo", "ci_hi", "n_samples"],
        curve.times.iter().enumerate().map(|(j, t)| {
            vec![num(*t), num(curve.wd_hat[j]), num(curve.ci_lo[j]), num(curve.ci_hi[j]), curve.n_samples.to_string()]
        }),
    )?;
    let t0: f64 = c.get("rate.t0")?;
    run.out.json(
        "report.json",
        &report(json!({
            "slope": curve.slope, "slope_se": curve.slope_se, "theoretical_exponent": curve.theoretical_exponent,
            "n": curve.n, "gamma": curve.gamma, "tail_start": curve.tail_start, "T_star": 2.0 * t0,
            "monotone": curve.monotone_up_to_ci(), "decay_ratio": curve.decay_ratio(),
            "reference_gap": curve.reference_gap, "stale_reference": curve.stale_reference
        })),
    )?;
    run.note(format!(
        "W_d from {:.4} to {:.4}; tail slope {:?}; theoretical exponent {}",
        curve.wd_hat.first().unwrap_or(&f64::NAN),
        curve.wd_hat.last().unwrap_or(&f64::NAN),
        curve.slope,
        curve.theoretical_exponent
    ));
    run.flag(curve.monotone_up_to_ci(), "mixing curve increases beyond its intervals");
    run.flag(curve.slope.is_some_and(|s| s < 0.0), "no decaying tail slope");
    if curve.stale_reference {
        run.note("note: reference gap exceeds the smallest curve value (finite-sample floor reached)");
    }
    Ok(())
}

fn ratekit_check(run: &mut Run) -> Result<()> {
    let c = run.cfg;
    let spec = c.model()?;
    let cfg = c.stepper()?;
    let mut params = RateParams::new(c.get("n")?, c.get("gamma")?)?;
    params.t0 = c.get("rate.t0")?;
    params.radius = c.get("rate.R")?;
    params.k1 = c.get("rate.K1")?;
    params.k2 = c.get("rate.K2")?;
    params.cn_star = c.get("rate.cn_star")?;
    params.big_cn_star = c.get("rate.Cn_star")?;
    params.check_for(spec.nonlinearity().lambda())?;

    let rule = crate::quad::GaussRule::new(16);
    let mut worst_g: f64 = 0.0;
    for i in 1..=20 {
        let x = i as f64 / 21.0;
        let closed = g_n(x, &params)?;
        let quad = rule.integrate(x, 1.0, 64, |t| g_n_integrand(t, &params));
        worst_g = worst_g.max((closed - quad).abs() / closed);
    }
    run.flag(worst_g < 1e-8, format!("g_n closed form off by {worst_g:.2e}"));
    let rec = contraction_recursion(&params, 1000);
    let below = rec.iter().enumerate().all(|(k, a)| g_n_inverse(k as f64, &params).is_ok_and(|g| *a <= g * (1.0 + 1e-12)));
    run.flag(below, "recursion exceeds g_n inverse");

    let (count, paths, cap): (usize, usize, usize) = (c.get("rate.states")?, c.get("rate.paths")?, c.get("rate.cap")?);
    let top = (100.0 * params.radius).powf(1.0 / params.n as f64);
    let mut estimates = Vec::with_capacity(count);
    let mut sandwich = true;
    for i in 0..count {
        let dir = State::random(spec.modes(), spec.length(), cfg.seed, i as u64, 1.0, 1.5);
        let level = top * i as f64 / (count.max(2) - 1) as f64;
        let s = scale_to_level(&spec, &dir, level)?;
        let e = w_n_estimate(&s, &params, &spec, &StepperConfig { seed: cfg.seed.wrapping_add(1000 + i as u64), ..cfg }, paths, cap)?;
        sandwich &= e.w >= psi_n(e.phi_n0, &params) && e.w >= 1.0;
        run.flag(!e.unreliable, format!("state {i}: {:.1}% of return times censored", 100.0 * e.censored_fraction));
        estimates.push(e);
    }
    run.flag(sandwich, "W_n below psi_n(Phi^n)");
    let fit = fit_wn_drift(&estimates, &params);
    run.flag(fit.holds, "held-out W_n drift check failed");
    params.k2 = fit.k2;

    let rho1: f64 = c.get("rate.rho1")?;
    let cert = RateCertificate::from_params(&params, rho1);
    run.out.json("certificate.json", &cert)?;
    run.out.json(
        "report.json",
        &report(json!({
            "g_n_max_rel_error": worst_g, "recursion_below_inverse": below, "sandwich": sandwich,
            "drift_fit": fit, "beta": params.with_rho1(rho1).beta, "T_star": params.t_star(),
            "estimates": estimates
        })),
    )?;
    run.note(format!("g_n max rel error {worst_g:.2e}; K2 = {:.4}; W_n drift holds = {}", fit.k2, fit.holds));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        let mut c = Config::default();
        for kv in ["K=8", "simulate.T=0.5", "simulate.every=0.1"] {
            c.set_pair(kv).unwrap();
        }
        c
    }

    #[test]
    fn simulate_zero_horizon_keeps_initial_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.set("simulate.T", "0").unwrap();
        run_experiment("simulate", &c, dir.path()).unwrap();
        let snap = crate::integrator::read_snapshot(&dir.path().join("snapshot.bin"), std::f64::consts::PI).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap[0].1, c.initial_state(&c.model().unwrap()).unwrap());
    }

    #[test]
    fn digests_are_deterministic() {
        let c = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run_experiment("simulate", &c, a.path()).unwrap().manifest;
        let mb = run_experiment("simulate", &c, b.path()).unwrap().manifest;
        assert_eq!(ma.outputs, mb.outputs);
        for (name, digest) in &ma.outputs {
            assert_eq!(&crate::integrator::content_hash(&std::fs::read(a.path().join(name)).unwrap()), digest);
        }
        let back = Config::from_text(&ma.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect::<String>()).unwrap();
        assert_eq!(&back, &c);
    }

    #[test]
    fn validate_flags_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment("validate", &Config::default(), dir.path()).unwrap();
        assert!(out.violations.is_empty());
        let mut c = Config::default();
        c.set("dim", "3").unwrap();
        let out = run_experiment("validate", &c, dir.path()).unwrap();
        assert_eq!(out.violations.len(), 1);
    }

    #[test]
    fn failed_run_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.set("simulate.every", "0.123").unwrap();
        c.set("simulate.T", "1").unwrap();
        assert!(run_experiment("simulate", &c, dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
