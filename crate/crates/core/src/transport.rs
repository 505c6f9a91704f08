//! Empirical Wasserstein distance under `d(U, V) = ||U - V||^2_{H^1 x L^2}`
//! via exact assignment, and the mixing curve toward a long-run reference.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{build_mode_flows, sample_steps, Stepper, StepperConfig};
use crate::model::{ModelSpec, State};
use crate::stats::{bootstrap_ci, fit_line, par_paths};

/// Square matrix of nonnegative finite costs, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape { expected: n * n, got: data.len() });
        }
        if data.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Domain("costs must be finite and nonnegative".into()));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Shape { expected: n, got: r.len() });
        }
        Self::new(n, rows.concat())
    }

    /// `C_ij = d(a_i, b_j)`, rows built in parallel.
    pub fn between(a: &[State], b: &[State]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape { expected: a.len(), got: b.len() });
        }
        let n = a.len();
        let data: Vec<f64> = a
            .par_iter()
            .flat_map_iter(|x| b.iter().map(move |y| cost(x, y)))
            .collect();
        Self::new(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Submatrix on rows `ri` and columns `ci` (indices may repeat).
    pub fn select(&self, ri: &[usize], ci: &[usize]) -> CostMatrix {
        let data = ri.iter().flat_map(|&i| ci.iter().map(move |&j| self.get(i, j))).collect();
        CostMatrix { n: ri.len(), data }
    }
}

/// `d(U, V) = ||u - u'||^2_{H^1} + ||v - v'||^2_{L^2}`.
pub fn cost(a: &State, b: &State) -> f64 {
    let alpha = a.u.coeffs().len();
    let mut s = 0.0;
    let ev = crate::spectral::eigenvalue;
    for k in 0..alpha {
        let du = a.u.coeffs()[k] - b.u.coeffs()[k];
        let dv = a.v.coeffs()[k] - b.v.coeffs()[k];
        s += ev(k + 1, a.length()).unwrap_or(f64::NAN) * du * du + dv * dv;
    }
    s
}

/// Minimum-cost perfect assignment (shortest augmenting paths with
/// potentials, O(n^3)). Returns `perm` with row `i` matched to `perm[i]` and
/// the total cost summed in row order.
pub fn assignment_min_cost(c: &CostMatrix) -> (Vec<usize>, f64) {
    let n = c.n;
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &c.data[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| c.get(i, perm[i])).sum();
    (perm, total)
}

/// Equal-size sample of states with its provenance.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub time: f64,
    pub seed: u64,
    pub dt: f64,
    pub origin: String,
    pub states: Vec<State>,
}

/// `(1/N) min_sigma sum_i d(a_i, b_sigma(i))`.
pub fn empirical_wd(a: &[State], b: &[State]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: a.len(), got: b.len() });
    }
    if a.is_empty() {
        return Err(Error::Domain("empty ensembles".into()));
    }
    let c = CostMatrix::between(a, b)?;
    Ok(assignment_min_cost(&c).1 / a.len() as f64)
}

/// Rate exponent `3 (n - 1 + gamma) / (4 (1 - gamma))`.
pub fn theoretical_exponent(n: u32, gamma: f64) -> f64 {
    3.0 * (n as f64 - 1.0 + gamma) / (4.0 * (1.0 - gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingCurve {
    pub times: Vec<f64>,
    pub wd_hat: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n_samples: usize,
    /// First sampled time at which the curve drops below half its first value.
    pub tail_start: Option<f64>,
    /// Weighted least-squares slope of `log wd` against `log t` on the tail.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub n: u32,
    pub gamma: f64,
    pub theoretical_exponent: f64,
    /// `W_d` between two independent reference samples, when provided.
    pub reference_gap: Option<f64>,
    pub stale_reference: bool,
}

impl MixingCurve {
    /// Each step either decreases or has overlapping intervals.
    pub fn monotone_up_to_ci(&self) -> bool {
        (1..self.times.len()).all(|j| self.wd_hat[j] <= self.wd_hat[j - 1] || self.ci_lo[j] <= self.ci_hi[j - 1])
    }

    pub fn decay_ratio(&self) -> f64 {
        match (self.wd_hat.first(), self.wd_hat.last()) {
            (Some(a), Some(b)) if *a > 0.0 => b / a,
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingPlan {
    pub n: u32,
    pub gamma: f64,
    pub bootstrap_reps: usize,
    /// Path ids used for the ensemble start here, away from reference chains.
    pub path_offset: u64,
}

impl Default for MixingPlan {
    fn default() -> Self {
        Self { n: 4, gamma: 0.25, bootstrap_reps: 200, path_offset: 1 << 32 }
    }
}

/// Ensembles of `count` paths from `u0` at each requested time.
pub fn evolve_ensemble(u0: &State, spec: &ModelSpec, cfg: &StepperConfig, times: &[f64], count: usize, path_offset: u64) -> Result<Vec<Vec<State>>> {
    cfg.validate(spec)?;
    let steps = sample_steps(times, cfg.dt)?;
    let flows = Arc::new(build_mode_flows(spec, cfg.dt));
    let paths = par_paths(count, |p| {
        let path = path_offset + p;
        let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
        let mut noise = st.noise(path);
        let mut s = u0.clone();
        let mut n = 0;
        let mut out = Vec::with_capacity(steps.len());
        for &target in &steps {
            while n < target {
                st.step(&mut s, &mut noise, n).map_err(|e| Error::Blowup { path, reason: e.to_string() })?;
                n += 1;
            }
            out.push(s.clone());
        }
        Ok(out)
    })?;
    Ok((0..times.len()).map(|j| paths.iter().map(|p| p[j].clone()).collect()).collect())
}

/// Estimate `W_d(P_t delta_{u0}, nu)` at `times` against `reference`. A second
/// independent reference, if supplied, drives the staleness check.
#[allow(clippy::too_many_arguments)]
pub fn mixing_curve(
    u0: &State,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    times: &[f64],
    reference: &[State],
    second_reference: Option<&[State]>,
    plan: &MixingPlan,
) -> Result<MixingCurve> {
    let n = reference.len();
    let ensembles = evolve_ensemble(u0, spec, cfg, times, n, plan.path_offset)?;
    curve_from_ensembles(times, &ensembles, reference, second_reference, plan, cfg.seed)
}

pub fn curve_from_ensembles(
    times: &[f64],
    ensembles: &[Vec<State>],
    reference: &[State],
    second_reference: Option<&[State]>,
    plan: &MixingPlan,
    seed: u64,
) -> Result<MixingCurve> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("mixing times must be strictly increasing".into()));
    }
    let n = reference.len();
    let mut wd_hat = Vec::with_capacity(times.len());
    let mut ci_lo = Vec::with_capacity(times.len());
    let mut ci_hi = Vec::with_capacity(times.len());
    let per_time: Vec<Result<(f64, f64, f64)>> = ensembles
        .par_iter()
        .enumerate()
        .map(|(j, ens)| {
            let c = CostMatrix::between(ens, reference)?;
            let w = assignment_min_cost(&c).1 / n as f64;
            // Rows and columns are resampled independently: the first half of
            // the 2n indices picks rows, the second half columns.
            let (lo, hi) = bootstrap_ci(2 * n, plan.bootstrap_reps, 0.95, seed ^ (0x6d69_7869 + j as u64), |idx| {
                let ri: Vec<usize> = idx[..n].iter().map(|&i| i % n).collect();
                let ci: Vec<usize> = idx[n..].iter().map(|&i| i % n).collect();
                assignment_min_cost(&c.select(&ri, &ci)).1 / n as f64
            });
            Ok((w, lo, hi))
        })
        .collect();
    for r in per_time {
        let (w, lo, hi) = r?;
        wd_hat.push(w);
        ci_lo.push(lo.min(w));
        ci_hi.push(hi.max(w));
    }
    let tail_start = wd_hat.first().and_then(|&w0| {
        wd_hat.iter().position(|&w| w < 0.5 * w0).map(|j| times[j])
    });
    let (mut slope, mut slope_se) = (None, None);
    if let Some(ts) = tail_start {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for j in 0..times.len() {
            if times[j] >= ts && wd_hat[j] > 0.0 && times[j] > 0.0 {
                let sd = ((ci_hi[j] - ci_lo[j]) / (2.0 * 1.96) / wd_hat[j]).max(1e-3);
                xs.push(times[j].ln());
                ys.push(wd_hat[j].ln());
                ws.push(1.0 / (sd * sd));
            }
        }
        if let Some(f) = fit_line(&xs, &ys, Some(&ws)) {
            slope = Some(f.slope);
            slope_se = Some(f.slope_se);
        }
    }
    let reference_gap = match second_reference {
        Some(r2) => Some(empirical_wd(reference, r2)?),
        None => None,
    };
    let floor = wd_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    let stale_reference = reference_gap.is_some_and(|g| g > floor);
    Ok(MixingCurve {
        times: times.to_vec(),
        wd_hat,
        ci_lo,
        ci_hi,
        n_samples: n,
        tail_start,
        slope,
        slope_se,
        n: plan.n,
        gamma: plan.gamma,
        theoretical_exponent: theoretical_exponent(plan.n, plan.gamma),
        reference_gap,
        stale_reference,
    })
}
