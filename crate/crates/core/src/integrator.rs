//! Time stepping: exact per-mode linear flow with exact Gaussian increments,
//! composed with a pointwise solve of the damping equation on the grid.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Nonlinearity, State};
use crate::quad::GaussRule;
use crate::rng::NoiseStream;
use crate::spectral::SpectralField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// Damping over `h`, then the linear stochastic flow over `h`.
    Lie,
    /// Damping over `h/2`, linear flow over `h`, damping over `h/2`.
    Strang,
}

impl std::str::FromStr for Splitting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lie" => Ok(Splitting::Lie),
            "strang" => Ok(Splitting::Strang),
            _ => Err(Error::Config(format!("unknown splitting `{s}` (expected lie or strang)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub splitting: Splitting,
    pub seed: u64,
}

impl StepperConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self { dt, splitting: Splitting::Lie, seed }
    }

    pub fn with_splitting(mut self, splitting: Splitting) -> Self {
        self.splitting = splitting;
        self
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let top = spec.eigenvalues().last().copied().unwrap_or(0.0).sqrt();
        if self.dt * top > 10.0 {
            return Err(Error::Config(format!(
                "dt = {} too large: dt * sqrt(alpha_K) = {:.3} exceeds 10",
                self.dt,
                self.dt * top
            )));
        }
        Ok(())
    }
}

/// `exp(s M)` for `M = [[0, 1], [-alpha, -1]]`.
pub fn propagator(alpha: f64, s: f64) -> [[f64; 2]; 2] {
    let z = alpha - 0.25;
    let x = z * s * s;
    let (c, sn) = if x.abs() < 0.25 {
        // cos(sqrt(z) s) and sin(sqrt(z) s)/sqrt(z) as power series in z s^2.
        let (mut c, mut sn) = (0.0, 0.0);
        let (mut tc, mut ts) = (1.0, s);
        for n in 0..30 {
            c += tc;
            sn += ts;
            let a = (2 * n + 1) as f64;
            let b = (2 * n + 2) as f64;
            tc *= -x / (a * b);
            ts *= -x / (b * (b + 1.0));
        }
        (c, sn)
    } else if z > 0.0 {
        let w = z.sqrt();
        ((w * s).cos(), (w * s).sin() / w)
    } else {
        let w = (-z).sqrt();
        ((w * s).cosh(), (w * s).sinh() / w)
    };
    let d = (-0.5 * s).exp();
    [
        [d * (c + 0.5 * sn), d * sn],
        [-d * alpha * sn, d * (c - 0.5 * sn)],
    ]
}

/// Exact one-step data for a single mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeFlow {
    pub alpha: f64,
    pub lambda: f64,
    pub h: f64,
    /// `exp(h M)`.
    pub e: [[f64; 2]; 2],
    /// Covariance of the stochastic convolution over one step.
    pub sigma: [[f64; 2]; 2],
    /// `Cov(Delta W, xi) = int_0^h exp(r M) b dr`.
    pub cross: [f64; 2],
    /// Lower Cholesky factor of the joint covariance of `(Delta W, xi_u, xi_v)`.
    pub chol: [[f64; 3]; 3],
}

impl ModeFlow {
    pub fn new(alpha: f64, lambda: f64, h: f64) -> Self {
        let e = propagator(alpha, h);
        let mut sigma = [[0.0; 2]; 2];
        let mut cross = [0.0; 2];
        if lambda != 0.0 {
            let omega = (alpha - 0.25).abs().sqrt().max(1.0);
            let panels = ((h * omega) / 0.5).ceil().max(1.0) as usize;
            let rule = GaussRule::new(16);
            let (mut s11, mut s12, mut s22, mut m1, mut m2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            rule.for_each_point(0.0, h, panels, |r, w| {
                let p = propagator(alpha, r);
                let (a, b) = (p[0][1], p[1][1]);
                s11 += w * a * a;
                s12 += w * a * b;
                s22 += w * b * b;
                m1 += w * a;
                m2 += w * b;
            });
            let l2 = lambda * lambda;
            sigma = [[l2 * s11, l2 * s12], [l2 * s12, l2 * s22]];
            cross = [lambda * m1, lambda * m2];
        }
        let cov = [
            [h, cross[0], cross[1]],
            [cross[0], sigma[0][0], sigma[0][1]],
            [cross[1], sigma[1][0], sigma[1][1]],
        ];
        Self { alpha, lambda, h, e, sigma, cross, chol: cholesky3(cov) }
    }

    /// Correlated `(Delta W, xi_u, xi_v)` from three standard normals.
    #[inline]
    pub fn increment(&self, z: &[f64]) -> ModeIncrement {
        let l = &self.chol;
        ModeIncrement {
            dw: l[0][0] * z[0],
            xu: l[1][0] * z[0] + l[1][1] * z[1],
            xv: l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2],
        }
    }
}

fn cholesky3(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs());
    for j in 0..3 {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        // Semidefinite pivots (no noise, or round-off) give a zero column.
        if d <= 1e-30 * scale || d <= 0.0 {
            continue;
        }
        let d = d.sqrt();
        l[j][j] = d;
        for i in j + 1..3 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / d;
        }
    }
    l
}

/// Brownian increment of one mode together with the stochastic convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModeIncrement {
    pub dw: f64,
    pub xu: f64,
    pub xv: f64,
}

impl ModeIncrement {
    /// Concatenate `self` (first half) with `next` (second half), where `e`
    /// propagates over the length of the second half.
    #[inline]
    pub fn then(self, next: ModeIncrement, e: &[[f64; 2]; 2]) -> ModeIncrement {
        ModeIncrement {
            dw: self.dw + next.dw,
            xu: e[0][0] * self.xu + e[0][1] * self.xv + next.xu,
            xv: e[1][0] * self.xu + e[1][1] * self.xv + next.xv,
        }
    }
}

/// Per-mode flows for one step size.
#[derive(Clone, Debug)]
pub struct FlowTable {
    pub h: f64,
    pub modes: Vec<ModeFlow>,
}

pub fn build_mode_flows(spec: &ModelSpec, dt: f64) -> FlowTable {
    let modes = spec
        .eigenvalues()
        .iter()
        .zip(spec.noise().lambdas())
        .map(|(&a, &l)| ModeFlow::new(a, l, dt))
        .collect();
    FlowTable { h: dt, modes }
}

/// Supplier of per-step noise increments.
pub trait NoiseSource {
    fn increments(&mut self, step: u64, out: &mut [ModeIncrement]);
}

/// Increments for the step size of `flows`, read directly from the stream.
pub struct DirectNoise {
    stream: NoiseStream,
    flows: Arc<FlowTable>,
    normals: Vec<f64>,
}

impl DirectNoise {
    pub fn new(seed: u64, path: u64, flows: Arc<FlowTable>) -> Self {
        let k = flows.modes.len();
        Self { stream: NoiseStream::new(seed, path, k), flows, normals: vec![0.0; 3 * k] }
    }
}

impl NoiseSource for DirectNoise {
    fn increments(&mut self, step: u64, out: &mut [ModeIncrement]) {
        self.stream.step_normals(step, &mut self.normals);
        for ((o, f), z) in out.iter_mut().zip(&self.flows.modes).zip(self.normals.chunks_exact(3)) {
            *o = f.increment(z);
        }
    }
}

/// Increments for step `h` assembled from `2^levels` fine steps of the same
/// stream, so that runs at `h` and `h / 2^levels` see the same Brownian path.
pub struct RefinedNoise {
    fine: DirectNoise,
    levels: u32,
    // Propagators over h/2^i, i = 1..=levels.
    props: Vec<Vec<[[f64; 2]; 2]>>,
    buf: Vec<ModeIncrement>,
}

impl RefinedNoise {
    pub fn new(seed: u64, path: u64, spec: &ModelSpec, coarse_dt: f64, levels: u32) -> Self {
        let fine_dt = coarse_dt / 2f64.powi(levels as i32);
        let fine = Arc::new(build_mode_flows(spec, fine_dt));
        let props = (1..=levels)
            .map(|i| {
                let h = coarse_dt / 2f64.powi(i as i32);
                spec.eigenvalues().iter().map(|&a| propagator(a, h)).collect()
            })
            .collect();
        let k = spec.modes();
        Self {
            fine: DirectNoise::new(seed, path, fine),
            levels,
            props,
            buf: vec![ModeIncrement::default(); k << levels],
        }
    }
}

impl NoiseSource for RefinedNoise {
    fn increments(&mut self, step: u64, out: &mut [ModeIncrement]) {
        let k = out.len();
        let n = 1usize << self.levels;
        for i in 0..n {
            let s = (step << self.levels) + i as u64;
            self.fine.increments(s, &mut self.buf[i * k..(i + 1) * k]);
        }
        let mut width = n;
        for level in (1..=self.levels as usize).rev() {
            let props = &self.props[level - 1];
            width /= 2;
            for i in 0..width {
                for m in 0..k {
                    let a = self.buf[2 * i * k + m];
                    let b = self.buf[(2 * i + 1) * k + m];
                    self.buf[i * k + m] = a.then(b, &props[m]);
                }
            }
        }
        out.copy_from_slice(&self.buf[..k]);
    }
}

/// Running pathwise quantities of the energy balance for
/// `E = ||u||^2_{H^1} + ||v||^2_H`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PathDiagnostics {
    pub beta: f64,
    pub time: f64,
    pub initial_energy: f64,
    pub energy: f64,
    /// `M(t) = sum 2 beta <v, Q Delta W>`.
    pub martingale: f64,
    /// Predictable bracket `4 beta^2 int ||Q v||^2 ds`.
    pub bracket: f64,
    /// `int ||v||^2_H ds`.
    pub int_v_sq: f64,
    /// `int ||v||^{lambda+1}_{L^{lambda+1}} ds`.
    pub int_v_lp: f64,
    /// `int <phi'(v), v>_H ds`.
    pub int_v_dphi: f64,
    /// `sum_n sum_k lambda_k^2 Delta W_k^2`.
    pub realized_qv: f64,
    /// `Tr(Q Q*) t`.
    pub trace_time: f64,
}

impl PathDiagnostics {
    pub fn new(beta: f64, s: &State) -> Self {
        let e = s.energy();
        Self { beta, initial_energy: e, energy: e, ..Default::default() }
    }

    /// `beta (E(t) - E(0)) + beta int (2||v||^2 + 2<phi'(v), v>) ds - M(t)
    /// - beta [W]_t`, with the realized quadratic variation in the last term.
    pub fn residual(&self) -> f64 {
        let b = self.beta;
        b * (self.energy - self.initial_energy) + b * (2.0 * self.int_v_sq + 2.0 * self.int_v_dphi)
            - self.martingale
            - b * self.realized_qv
    }

    /// The same balance with the compensator `beta Tr(QQ*) t`.
    pub fn residual_with_trace(&self) -> f64 {
        self.residual() + self.beta * (self.realized_qv - self.trace_time)
    }

    pub fn is_finite(&self) -> bool {
        [self.energy, self.martingale, self.int_v_sq, self.int_v_lp, self.int_v_dphi, self.realized_qv]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// One trajectory's worth of workspace and the stepping rule.
pub struct Stepper {
    spec: ModelSpec,
    cfg: StepperConfig,
    flows: Arc<FlowTable>,
    grid: Vec<f64>,
    grid2: Vec<f64>,
    coeffs: Vec<f64>,
    incs: Vec<ModeIncrement>,
    lp: f64,
}

impl Stepper {
    pub fn new(spec: &ModelSpec, cfg: StepperConfig) -> Result<Self> {
        cfg.validate(spec)?;
        let flows = Arc::new(build_mode_flows(spec, cfg.dt));
        Ok(Self::with_flows(spec, cfg, flows))
    }

    pub fn with_flows(spec: &ModelSpec, cfg: StepperConfig, flows: Arc<FlowTable>) -> Self {
        let m = spec.basis().grid_len();
        let k = spec.modes();
        Self {
            spec: spec.clone(),
            cfg,
            flows,
            grid: vec![0.0; m],
            grid2: vec![0.0; m],
            coeffs: vec![0.0; k],
            incs: vec![ModeIncrement::default(); k],
            lp: spec.nonlinearity().lambda() + 1.0,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn flows(&self) -> &Arc<FlowTable> {
        &self.flows
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// The stream this stepper reads for trajectory `path`.
    pub fn noise(&self, path: u64) -> DirectNoise {
        DirectNoise::new(self.cfg.seed, path, self.flows.clone())
    }

    pub fn step(&mut self, s: &mut State, noise: &mut dyn NoiseSource, n: u64) -> Result<()> {
        let mut incs = std::mem::take(&mut self.incs);
        noise.increments(n, &mut incs);
        self.apply(s, &incs, 1.0);
        self.incs = incs;
        self.check(s, n)
    }

    /// Step while accumulating the pathwise energy balance.
    pub fn step_tracked(
        &mut self,
        s: &mut State,
        noise: &mut dyn NoiseSource,
        n: u64,
        diag: &mut PathDiagnostics,
    ) -> Result<()> {
        let h = self.cfg.dt;
        let nl = *self.spec.nonlinearity();
        let basis = self.spec.basis();
        basis.to_grid(s.v.coeffs(), &mut self.grid);
        let w = basis.weight();
        let (mut vd, mut vp) = (0.0, 0.0);
        for &x in &self.grid {
            vd += x * nl.dphi(x);
            vp += if self.lp == 4.0 { (x * x) * (x * x) } else { x.abs().powf(self.lp) };
        }
        let mut incs = std::mem::take(&mut self.incs);
        noise.increments(n, &mut incs);
        let b = diag.beta;
        let (mut mart, mut qv, mut qvv, mut vsq) = (0.0, 0.0, 0.0, 0.0);
        for ((inc, f), v) in incs.iter().zip(&self.flows.modes).zip(s.v.coeffs()) {
            mart += v * f.lambda * inc.dw;
            qv += f.lambda * f.lambda * inc.dw * inc.dw;
            qvv += f.lambda * f.lambda * v * v;
            vsq += v * v;
        }
        diag.martingale += 2.0 * b * mart;
        diag.bracket += 4.0 * b * b * qvv * h;
        diag.realized_qv += qv;
        diag.int_v_sq += vsq * h;
        diag.int_v_dphi += w * vd * h;
        diag.int_v_lp += w * vp * h;
        diag.trace_time += self.spec.trace_qq() * h;
        diag.time += h;
        self.apply(s, &incs, 1.0);
        self.incs = incs;
        diag.energy = s.energy();
        self.check(s, n)
    }

    /// Deterministic step with prescribed increments; `sign = -1` gives the
    /// antithetic partner.
    pub fn apply(&mut self, s: &mut State, incs: &[ModeIncrement], sign: f64) {
        let h = self.cfg.dt;
        match self.cfg.splitting {
            Splitting::Lie => {
                self.damp(s.v.coeffs_mut(), h);
                self.linear(s, incs, sign);
            }
            Splitting::Strang => {
                self.damp(s.v.coeffs_mut(), 0.5 * h);
                self.linear(s, incs, sign);
                self.damp(s.v.coeffs_mut(), 0.5 * h);
            }
        }
    }

    fn check(&self, s: &State, n: u64) -> Result<()> {
        if !s.is_finite() {
            return Err(Error::Integration { step: n, reason: "state became non-finite".into() });
        }
        Ok(())
    }

    pub(crate) fn linear(&self, s: &mut State, incs: &[ModeIncrement], sign: f64) {
        let (u, v) = (s.u.coeffs_mut(), s.v.coeffs_mut());
        linear_flow(&self.flows, u, v, Some((incs, sign)));
    }

    /// `v <- P_K S_h(v)` with `S_h` the damping solution operator on the grid.
    pub(crate) fn damp(&mut self, v: &mut [f64], h: f64) {
        let nl = *self.spec.nonlinearity();
        if matches!(nl, Nonlinearity::Zero) {
            return;
        }
        let basis = self.spec.basis();
        basis.to_grid(v, &mut self.grid);
        for x in self.grid.iter_mut() {
            *x = nl.damping_flow(h, *x);
        }
        basis.from_grid(&self.grid, v);
    }

    /// Damp a primary velocity `v` and the difference `dv = v - v'` to its
    /// partner `v'` without forming `v'` explicitly.
    pub(crate) fn damp_pair(&mut self, v: &mut [f64], dv: &mut [f64], h: f64) {
        let nl = *self.spec.nonlinearity();
        if matches!(nl, Nonlinearity::Zero) {
            return;
        }
        let basis = self.spec.basis();
        basis.to_grid(v, &mut self.grid);
        basis.to_grid(dv, &mut self.grid2);
        for (a, d) in self.grid.iter_mut().zip(self.grid2.iter_mut()) {
            *d = nl.damping_difference(h, *a, *d);
            *a = nl.damping_flow(h, *a);
        }
        basis.from_grid(&self.grid, v);
        basis.from_grid(&self.grid2, dv);
    }

    pub(crate) fn buffers(&mut self) -> (&mut Vec<ModeIncrement>, &mut Vec<f64>) {
        (&mut self.incs, &mut self.coeffs)
    }
}

/// `(u, v) <- E (u, v) + sign * xi`, mode by mode.
pub(crate) fn linear_flow(flows: &FlowTable, u: &mut [f64], v: &mut [f64], noise: Option<(&[ModeIncrement], f64)>) {
    for (k, f) in flows.modes.iter().enumerate() {
        let (a, b) = (u[k], v[k]);
        let mut nu = f.e[0][0] * a + f.e[0][1] * b;
        let mut nv = f.e[1][0] * a + f.e[1][1] * b;
        if let Some((incs, sign)) = noise {
            nu += sign * incs[k].xu;
            nv += sign * incs[k].xv;
        }
        u[k] = nu;
        v[k] = nv;
    }
}

/// Sampled trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub diagnostics: PathDiagnostics,
}

/// Convert requested sample times into step indices.
pub fn sample_steps(times: &[f64], dt: f64) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(times.len());
    let mut last: Option<u64> = None;
    for &t in times {
        if !(t >= 0.0) {
            return Err(Error::Config(format!("sample time {t} is negative")));
        }
        let n = (t / dt).round();
        if (n * dt - t).abs() > 1e-9 * t.max(dt) {
            return Err(Error::Config(format!("sample time {t} is not a multiple of dt = {dt}")));
        }
        let n = n as u64;
        if last.is_some_and(|l| n <= l) {
            return Err(Error::Config("sample times must be strictly increasing".into()));
        }
        last = Some(n);
        out.push(n);
    }
    Ok(out)
}

/// `times = 0, every, 2 every, ..., t_end`.
pub fn uniform_times(t_end: f64, every: f64) -> Vec<f64> {
    let n = (t_end / every).round() as usize;
    (0..=n).map(|i| i as f64 * every).collect()
}

/// Run path `path` from `u0` until the last requested time.
pub fn simulate(
    u0: &State,
    times: &[f64],
    spec: &ModelSpec,
    cfg: &StepperConfig,
    path: u64,
    beta: f64,
) -> Result<Trajectory> {
    let mut stepper = Stepper::new(spec, *cfg)?;
    simulate_with(&mut stepper, u0, times, path, beta)
}

pub fn simulate_with(
    stepper: &mut Stepper,
    u0: &State,
    times: &[f64],
    path: u64,
    beta: f64,
) -> Result<Trajectory> {
    let steps = sample_steps(times, stepper.dt())?;
    let mut noise = stepper.noise(path);
    let mut s = u0.clone();
    let mut diag = PathDiagnostics::new(beta, &s);
    let mut out = Vec::with_capacity(times.len());
    let mut n = 0u64;
    for &target in &steps {
        while n < target {
            stepper.step_tracked(&mut s, &mut noise, n, &mut diag).map_err(|e| blowup(path, e))?;
            n += 1;
        }
        out.push(s.clone());
    }
    Ok(Trajectory { times: times.to_vec(), states: out, diagnostics: diag })
}

fn blowup(path: u64, e: Error) -> Error {
    match e {
        Error::Integration { step, reason } => Error::Blowup { path, reason: format!("step {step}: {reason}") },
        other => other,
    }
}

/// Observe path `path` at every `every` steps (including step 0) for
/// `count` observations.
pub fn run_observed<F>(stepper: &mut Stepper, u0: &State, path: u64, every: u64, count: usize, mut observe: F) -> Result<State>
where
    F: FnMut(usize, &State) -> Result<()>,
{
    let mut noise = stepper.noise(path);
    let mut s = u0.clone();
    let mut n = 0u64;
    for i in 0..count {
        if i > 0 {
            for _ in 0..every {
                stepper.step(&mut s, &mut noise, n).map_err(|e| blowup(path, e))?;
                n += 1;
            }
        }
        observe(i, &s)?;
    }
    Ok(s)
}

/// Draws from a long-run proxy of the invariant measure: `chains` independent
/// runs from rest, each burned in for `burn_in` and then sampled every `thin`
/// time units until `count` states have been collected overall.
pub fn stationary_samples(
    spec: &ModelSpec,
    cfg: &StepperConfig,
    chains: usize,
    burn_in: f64,
    thin: f64,
    count: usize,
) -> Result<Vec<State>> {
    let chains = chains.max(1);
    let per_chain = count.div_ceil(chains);
    let burn = sample_steps(&[burn_in], cfg.dt)?[0];
    let every = (thin / cfg.dt).round() as u64;
    if every == 0 || ((every as f64) * cfg.dt - thin).abs() > 1e-9 * thin {
        return Err(Error::Config(format!("thinning {thin} is not a multiple of dt")));
    }
    let flows = Arc::new(build_mode_flows(spec, cfg.dt));
    cfg.validate(spec)?;
    let per: Vec<Result<Vec<State>>> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut st = Stepper::with_flows(spec, *cfg, flows.clone());
            let mut noise = st.noise(c);
            let mut s = spec.zero_state();
            let mut n = 0;
            while n < burn {
                st.step(&mut s, &mut noise, n).map_err(|e| blowup(c, e))?;
                n += 1;
            }
            let mut got = Vec::with_capacity(per_chain);
            for _ in 0..per_chain {
                for _ in 0..every {
                    st.step(&mut s, &mut noise, n).map_err(|e| blowup(c, e))?;
                    n += 1;
                }
                got.push(s.clone());
            }
            Ok(got)
        })
        .collect();
    let mut all = Vec::with_capacity(chains * per_chain);
    for r in per {
        all.extend(r?);
    }
    // Interleave chains so truncation to `count` keeps every chain represented.
    let mut out = Vec::with_capacity(count);
    for i in 0..per_chain {
        for c in 0..chains {
            if out.len() < count {
                out.push(all[c * per_chain + i].clone());
            }
        }
    }
    Ok(out)
}

const SNAPSHOT_MAGIC: &[u8; 6] = b"SWAVE1";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Serialize samples `(t, U)` in the little-endian snapshot format.
pub fn encode_snapshot(samples: &[(f64, State)]) -> Result<Vec<u8>> {
    let k = samples.first().map_or(0, |s| s.1.modes());
    let mut out = Vec::with_capacity(18 + samples.len() * 8 * (1 + 2 * k));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for (t, s) in samples {
        if s.modes() != k {
            return Err(Error::Shape { expected: k, got: s.modes() });
        }
        out.extend_from_slice(&t.to_le_bytes());
        for c in s.u.coeffs().iter().chain(s.v.coeffs()) {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8], length: f64) -> Result<Vec<(f64, State)>> {
    let mut r = bytes;
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |r: &mut &[u8]| -> Result<u32> {
        r.read_exact(&mut word).map_err(|_| Error::Format("truncated header".into()))?;
        Ok(u32::from_le_bytes(word))
    };
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let k = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let need = count * 8 * (1 + 2 * k);
    if r.len() != need {
        return Err(Error::Format(format!("expected {need} payload bytes, found {}", r.len())));
    }
    let mut vals = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = vals.next().expect("sized");
        let u: Vec<f64> = vals.by_ref().take(k).collect();
        let v: Vec<f64> = vals.by_ref().take(k).collect();
        out.push((t, State::new(SpectralField::new(u, length)?, SpectralField::new(v, length)?)?));
    }
    Ok(out)
}

pub fn write_snapshot(path: &Path, samples: &[(f64, State)]) -> Result<String> {
    let bytes = encode_snapshot(samples)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(content_hash(&bytes))
}

pub fn read_snapshot(path: &Path, length: f64) -> Result<Vec<(f64, State)>> {
    decode_snapshot(&std::fs::read(path)?, length)
}

/// Git-style blob digest: `sha256("blob <len>\0" ++ bytes)`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}
