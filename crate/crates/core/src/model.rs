//! Problem definition: nonlinear damping, noise spectrum, states, the
//! Lyapunov functional `Phi` and its generator.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::rng::NoiseStream;
use crate::spectral::{SpectralBasis, SpectralField};

/// Velocity damping potential `phi`, entering the dynamics through `phi'(v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `phi(x) = |x|^(lambda+1) / (lambda+1)`, so `phi'(x) = |x|^(lambda-1) x`.
    Power { lambda: f64 },
    /// `phi'(x) = x (x^2 + delta^2)^((lambda-1)/2)`; smooth at the origin for
    /// any real `lambda`.
    SmoothPower { lambda: f64, delta: f64 },
    /// `phi'(x) = slope * x`.
    Linear { slope: f64 },
    /// No damping nonlinearity (test mode).
    Zero,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Power { lambda: 3.0 }
    }
}

impl Nonlinearity {
    pub fn power(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(domain(format!("power family needs lambda >= 1, got {lambda}")));
        }
        Ok(Nonlinearity::Power { lambda })
    }

    pub fn smooth_power(lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(domain(format!("smooth power family needs lambda >= 1, got {lambda}")));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(domain(format!("smoothing must be positive, got {delta}")));
        }
        Ok(Nonlinearity::SmoothPower { lambda, delta })
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Nonlinearity::Power { .. } => "power",
            Nonlinearity::SmoothPower { .. } => "smooth_power",
            Nonlinearity::Linear { .. } => "linear",
            Nonlinearity::Zero => "zero",
        }
    }

    /// Growth exponent `lambda` of `phi'`.
    pub fn lambda(&self) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } | Nonlinearity::SmoothPower { lambda, .. } => lambda,
            Nonlinearity::Linear { .. } | Nonlinearity::Zero => 1.0,
        }
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } => {
                if lambda == 3.0 {
                    let x2 = x * x;
                    0.25 * x2 * x2
                } else {
                    x.abs().powf(lambda + 1.0) / (lambda + 1.0)
                }
            }
            Nonlinearity::SmoothPower { lambda, delta } => {
                let e = 0.5 * (lambda + 1.0);
                let r = (x / delta) * (x / delta);
                delta.powf(lambda + 1.0) * (e * r.ln_1p()).exp_m1() / (lambda + 1.0)
            }
            Nonlinearity::Linear { slope } => 0.5 * slope * x * x,
            Nonlinearity::Zero => 0.0,
        }
    }

    #[inline]
    pub fn dphi(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } => {
                if lambda == 3.0 {
                    x * x * x
                } else if lambda == 1.0 {
                    x
                } else {
                    x.abs().powf(lambda - 1.0) * x
                }
            }
            Nonlinearity::SmoothPower { lambda, delta } => {
                x * (x * x + delta * delta).powf(0.5 * (lambda - 1.0))
            }
            Nonlinearity::Linear { slope } => slope * x,
            Nonlinearity::Zero => 0.0,
        }
    }

    #[inline]
    pub fn ddphi(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } => {
                if lambda == 3.0 {
                    3.0 * x * x
                } else if lambda == 1.0 {
                    1.0
                } else {
                    lambda * x.abs().powf(lambda - 1.0)
                }
            }
            Nonlinearity::SmoothPower { lambda, delta } => {
                let s = x * x + delta * delta;
                s.powf(0.5 * (lambda - 3.0)) * (lambda * x * x + delta * delta)
            }
            Nonlinearity::Linear { slope } => slope,
            Nonlinearity::Zero => 0.0,
        }
    }

    /// Time-`h` map of the damping equation `dv/dt = -phi'(v)`: exact for the
    /// power and linear families, implicit midpoint for the smoothed family.
    #[inline]
    pub fn damping_flow(&self, h: f64, v: f64) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } => {
                if lambda == 1.0 {
                    v * (-h).exp()
                } else if lambda == 3.0 {
                    v / (1.0 + 2.0 * h * v * v).sqrt()
                } else {
                    let m = lambda - 1.0;
                    v * (1.0 + m * h * v.abs().powf(m)).powf(-1.0 / m)
                }
            }
            Nonlinearity::SmoothPower { .. } => 2.0 * self.midpoint(h, v) - v,
            Nonlinearity::Linear { slope } => v * (-slope * h).exp(),
            Nonlinearity::Zero => v,
        }
    }

    /// Derivative of [`Self::damping_flow`] with respect to `v`.
    #[inline]
    pub fn damping_slope(&self, h: f64, v: f64) -> f64 {
        match *self {
            Nonlinearity::Power { lambda } => {
                if lambda == 1.0 {
                    (-h).exp()
                } else if lambda == 3.0 {
                    let b = 1.0 + 2.0 * h * v * v;
                    1.0 / (b * b.sqrt())
                } else {
                    let m = lambda - 1.0;
                    (1.0 + m * h * v.abs().powf(m)).powf(-lambda / m)
                }
            }
            Nonlinearity::SmoothPower { .. } => {
                let q = 0.5 * h * self.ddphi(self.midpoint(h, v));
                (1.0 - q) / (1.0 + q)
            }
            Nonlinearity::Linear { slope } => (-slope * h).exp(),
            Nonlinearity::Zero => 1.0,
        }
    }

    /// `damping_flow(h, a) - damping_flow(h, a - delta)` without cancellation
    /// when `delta` is tiny compared to `a`.
    #[inline]
    pub fn damping_difference(&self, h: f64, a: f64, delta: f64) -> f64 {
        if delta == 0.0 {
            return 0.0;
        }
        if matches!(self, Nonlinearity::Zero) {
            return delta;
        }
        if delta.abs() <= 1e-3 * a.abs().max(1.0) {
            // Three-point Gauss rule of the slope over [a - delta, a].
            const X: f64 = 0.774_596_669_241_483_4;
            let mid = a - 0.5 * delta;
            let half = 0.5 * delta;
            let s = 5.0 / 9.0 * self.damping_slope(h, mid - half * X)
                + 8.0 / 9.0 * self.damping_slope(h, mid)
                + 5.0 / 9.0 * self.damping_slope(h, mid + half * X);
            half * s
        } else {
            self.damping_flow(h, a) - self.damping_flow(h, a - delta)
        }
    }

    // Midpoint m of the implicit step: 2m + h phi'(m) = 2v.
    fn midpoint(&self, h: f64, v: f64) -> f64 {
        let mut m = v;
        for _ in 0..60 {
            let f = 2.0 * m + h * self.dphi(m) - 2.0 * v;
            let d = 2.0 + h * self.ddphi(m);
            let step = f / d;
            m -= step;
            if step.abs() <= 1e-15 * m.abs().max(1e-300) {
                break;
            }
        }
        m
    }
}

/// Diagonal noise operator `Q e_k = lambda_k e_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSpec {
    lambdas: Vec<f64>,
    /// `(A0, s)` when the spectrum follows `A0 k^{-s}`.
    rule: Option<(f64, f64)>,
}

impl NoiseSpec {
    pub fn power_law(amplitude: f64, decay: f64, modes: usize) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(domain(format!("noise amplitude must be non-negative, got {amplitude}")));
        }
        if !decay.is_finite() {
            return Err(domain("noise decay must be finite"));
        }
        let lambdas = (1..=modes).map(|k| amplitude * (k as f64).powf(-decay)).collect();
        Ok(Self { lambdas, rule: Some((amplitude, decay)) })
    }

    pub fn from_values(lambdas: Vec<f64>) -> Result<Self> {
        if let Some(x) = lambdas.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(domain(format!("noise coefficients must be non-negative, got {x}")));
        }
        Ok(Self { lambdas, rule: None })
    }

    pub fn zero(modes: usize) -> Self {
        Self { lambdas: vec![0.0; modes], rule: Some((0.0, 0.0)) }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn rule(&self) -> Option<(f64, f64)> {
        self.rule
    }

    pub fn is_zero(&self) -> bool {
        self.lambdas.iter().all(|&l| l == 0.0)
    }
}

/// Partial sum of a trace series with an integral tail estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceSeries {
    pub partial: f64,
    pub tail_bound: f64,
    pub estimate: f64,
    pub converges: bool,
}

/// `sum_k c k^{-q}` truncated at `modes`, with tail bound `c K^{1-q}/(q-1)`
/// and the midpoint-corrected estimate `partial + c (K+1/2)^{1-q}/(q-1)`.
pub fn power_series(c: f64, q: f64, modes: usize) -> TraceSeries {
    let partial: f64 = (1..=modes).map(|k| c * (k as f64).powf(-q)).sum();
    if c == 0.0 {
        return TraceSeries { partial, tail_bound: 0.0, estimate: partial, converges: true };
    }
    if q <= 1.0 {
        return TraceSeries {
            partial,
            tail_bound: f64::INFINITY,
            estimate: f64::INFINITY,
            converges: false,
        };
    }
    let k = modes as f64;
    let tail_bound = c * k.powf(1.0 - q) / (q - 1.0);
    let estimate = partial + c * (k + 0.5).powf(1.0 - q) / (q - 1.0);
    TraceSeries { partial, tail_bound, estimate, converges: true }
}

/// Position/velocity pair `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl State {
    pub fn new(u: SpectralField, v: SpectralField) -> Result<Self> {
        if u.modes() != v.modes() {
            return Err(Error::Shape { expected: u.modes(), got: v.modes() });
        }
        if u.length() != v.length() {
            return Err(domain("position and velocity live on different domains"));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(modes: usize, length: f64) -> Self {
        Self { u: SpectralField::zeros(modes, length), v: SpectralField::zeros(modes, length) }
    }

    pub fn modes(&self) -> usize {
        self.u.modes()
    }

    pub fn length(&self) -> f64 {
        self.u.length()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// `||u||^2_{H^beta} + ||v||^2_{H^{beta-1}}`.
    pub fn norm_sq(&self, beta: f64) -> f64 {
        self.u.sobolev_norm_sq(beta) + self.v.sobolev_norm_sq(beta - 1.0)
    }

    /// `||u||^2_{H^1} + ||v||^2_H`, the distance `d(U, 0)`.
    pub fn energy(&self) -> f64 {
        self.norm_sq(1.0)
    }

    pub fn difference(&self, other: &State) -> State {
        let mut out = self.clone();
        out.u.add_scaled(&other.u, -1.0);
        out.v.add_scaled(&other.v, -1.0);
        out
    }

    pub fn scaled(&self, s: f64) -> State {
        let mut out = self.clone();
        out.u.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        out.v.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Gaussian state with coefficients `amplitude * k^{-decay} * N(0, 1)`,
    /// reproducible from `(seed, index)`.
    pub fn random(modes: usize, length: f64, seed: u64, index: u64, amplitude: f64, decay: f64) -> Self {
        let mut stream = NoiseStream::new(seed ^ 0x5eed_5_7a7e, index, modes);
        let mut z = vec![0.0; 3 * modes];
        stream.step_normals(0, &mut z);
        let mut s = State::zeros(modes, length);
        for k in 0..modes {
            let w = amplitude * ((k + 1) as f64).powf(-decay);
            s.u.coeffs_mut()[k] = w * z[3 * k];
            s.v.coeffs_mut()[k] = w * z[3 * k + 1];
        }
        s
    }
}

/// `d(U, V) = ||U - V||^2_{H^1 x H}`.
pub fn distance(a: &State, b: &State) -> f64 {
    let base = std::f64::consts::PI / a.length();
    let mut total = 0.0;
    for k in 0..a.modes() {
        let alpha = ((k + 1) as f64 * base).powi(2);
        let du = a.u.coeffs()[k] - b.u.coeffs()[k];
        let dv = a.v.coeffs()[k] - b.v.coeffs()[k];
        total += alpha * du * du + dv * dv;
    }
    total
}

/// Immutable problem definition shared by integrators and estimators.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    length: f64,
    nonlinearity: Nonlinearity,
    noise: NoiseSpec,
    basis: Arc<SpectralBasis>,
}

pub const DEFAULT_MODES: usize = 64;
pub const DEFAULT_OVERSAMPLE: usize = 2;

impl ModelSpec {
    pub fn new(length: f64, modes: usize, nonlinearity: Nonlinearity, noise: NoiseSpec) -> Result<Self> {
        if noise.lambdas().len() != modes {
            return Err(Error::Shape { expected: modes, got: noise.lambdas().len() });
        }
        let basis = Arc::new(SpectralBasis::new(modes, length, DEFAULT_OVERSAMPLE)?);
        Ok(Self { length, nonlinearity, noise, basis })
    }

    /// L = pi, K = 64, `phi'(x) = x^3`, `lambda_k = k^{-3}`.
    pub fn default_model() -> Self {
        let noise = NoiseSpec::power_law(1.0, 3.0, DEFAULT_MODES).expect("valid default noise");
        Self::new(std::f64::consts::PI, DEFAULT_MODES, Nonlinearity::default(), noise)
            .expect("valid default model")
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        Self::new(self.length, self.modes(), self.nonlinearity, noise)
    }

    pub fn with_nonlinearity(&self, nonlinearity: Nonlinearity) -> Self {
        Self { nonlinearity, ..self.clone() }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn modes(&self) -> usize {
        self.basis.modes()
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.basis.eigenvalues()
    }

    pub fn zero_state(&self) -> State {
        State::zeros(self.modes(), self.length)
    }

    /// State `(c e_k, 0)`.
    pub fn mode_state(&self, k: usize, c: f64) -> State {
        State {
            u: SpectralField::mode(self.modes(), k, c, self.length),
            v: SpectralField::zeros(self.modes(), self.length),
        }
    }

    fn check(&self, s: &State) -> Result<()> {
        if s.modes() != self.modes() {
            return Err(Error::Shape { expected: self.modes(), got: s.modes() });
        }
        if !s.is_finite() {
            return Err(Error::NonFinite("state has non-finite coefficients".into()));
        }
        Ok(())
    }

    /// Truncated `Tr(Q Q*) = sum_{k<=K} lambda_k^2`.
    pub fn trace_qq(&self) -> f64 {
        self.noise.lambdas().iter().map(|l| l * l).sum()
    }

    /// Truncated `Tr(Q A Q*) = sum_{k<=K} lambda_k^2 alpha_k`.
    pub fn trace_qaq(&self) -> f64 {
        self.noise.lambdas().iter().zip(self.eigenvalues()).map(|(l, a)| l * l * a).sum()
    }

    /// `sum_{k<=K} lambda_k^2 alpha_k^r` with the tail estimate of the full series
    /// when the spectrum follows a power law.
    pub fn trace_series(&self, r: f64) -> TraceSeries {
        match self.noise.rule() {
            Some((a0, s)) => {
                let c = a0 * a0 * (std::f64::consts::PI / self.length).powf(2.0 * r);
                power_series(c, 2.0 * s - 2.0 * r, self.modes())
            }
            None => {
                let partial = self
                    .noise
                    .lambdas()
                    .iter()
                    .zip(self.eigenvalues())
                    .map(|(l, a)| l * l * a.powf(r))
                    .sum();
                TraceSeries { partial, tail_bound: 0.0, estimate: partial, converges: true }
            }
        }
    }

    pub fn phi_functionals(&self, f: &SpectralField) -> Result<PhiFunctionals> {
        phi_functionals_on(&self.nonlinearity, &self.basis, f)
    }
}

/// The four nonlinear functionals appearing in the energy identities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhiFunctionals {
    /// `||phi(f)||_{L^1}`.
    pub l1_phi: f64,
    /// `||phi'(f)||^2_H`.
    pub dphi_sq: f64,
    /// `<f, phi'(f)>_H`.
    pub f_dphi: f64,
    /// `<phi''(f) grad f, grad f>_H`.
    pub grad_term: f64,
    pub finite: bool,
}

/// Nonlinear functionals of `f` on a 2x oversampled grid.
pub fn phi_functionals(nl: &Nonlinearity, f: &SpectralField) -> Result<PhiFunctionals> {
    let basis = SpectralBasis::new(f.modes(), f.length(), DEFAULT_OVERSAMPLE)?;
    phi_functionals_on(nl, &basis, f)
}

fn phi_functionals_on(nl: &Nonlinearity, basis: &SpectralBasis, f: &SpectralField) -> Result<PhiFunctionals> {
    let grid = basis.field_to_grid(f)?;
    let mut grad = vec![0.0; basis.grid_len()];
    basis.derivative_to_grid(f.coeffs(), &mut grad);
    let w = basis.weight();
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (x, g) in grid.iter().zip(&grad) {
        let p = nl.dphi(*x);
        a += nl.phi(*x).abs();
        b += p * p;
        c += x * p;
        d += nl.ddphi(*x) * g * g;
    }
    let out = PhiFunctionals { l1_phi: w * a, dphi_sq: w * b, f_dphi: w * c, grad_term: w * d, finite: true };
    let finite = [out.l1_phi, out.dphi_sq, out.f_dphi, out.grad_term].iter().all(|x| x.is_finite());
    Ok(PhiFunctionals { finite, ..out })
}

/// `Phi(u, v) = ||u||^2_{H^2} + ||v||^2_{H^1} + <u, v>_{H^1} + 1/2 ||u||^2_{H^1}
/// + ||phi(v)||_{L^1}`.
pub fn big_phi(spec: &ModelSpec, s: &State) -> Result<f64> {
    spec.check(s)?;
    let basis = spec.basis();
    let mut grid = vec![0.0; basis.grid_len()];
    basis.to_grid(s.v.coeffs(), &mut grid);
    let value = quadratic_phi(spec.eigenvalues(), s.u.coeffs(), s.v.coeffs())
        + basis.weight() * grid.iter().map(|x| spec.nonlinearity.phi(*x).abs()).sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite("Phi overflowed".into()));
    }
    Ok(value)
}

/// Quadratic part of `Phi`.
pub fn quadratic_phi(alpha: &[f64], u: &[f64], v: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(u.iter().zip(v))
        .map(|(a, (u, v))| a * a * u * u + a * v * v + a * u * v + 0.5 * a * u * u)
        .sum()
}

/// Pieces of the generator acting on `Phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneratorTerms {
    pub phi: f64,
    /// `L Phi`.
    pub drift: f64,
    /// `sum_k lambda_k^2 <2Av + Au + phi'(v), e_k>^2`, the quadratic variation rate of `Phi`.
    pub quadratic_variation: f64,
}

/// Generator of the Galerkin system applied to `Phi`.
///
/// The nonlinearity enters as its grid projection `g = P_K phi'(v)`, so that
/// the value is the exact Ito drift of the finite-dimensional SDE:
/// `-||v||^2_{H^1} - 2<Av, g> - ||Au + g||^2 - <v, g> + Tr(QAQ*)
/// + 1/2 sum_k lambda_k^2 <phi''(v) e_k, e_k>`.
pub fn generator_terms(spec: &ModelSpec, s: &State) -> Result<GeneratorTerms> {
    spec.check(s)?;
    let basis = spec.basis();
    let nl = spec.nonlinearity;
    let m = basis.grid_len();
    let k = spec.modes();
    let mut grid = vec![0.0; m];
    basis.to_grid(s.v.coeffs(), &mut grid);
    let mut phi_sum = 0.0;
    let mut vg = 0.0;
    let mut dphi = vec![0.0; m];
    let mut curv = vec![0.0; m];
    for j in 0..m {
        let x = grid[j];
        phi_sum += nl.phi(x).abs();
        dphi[j] = nl.dphi(x);
        curv[j] = nl.ddphi(x);
        vg += x * dphi[j];
    }
    let w = basis.weight();
    let mut g = vec![0.0; k];
    basis.from_grid(&dphi, &mut g);
    let alpha = spec.eigenvalues();
    let lambdas = spec.noise.lambdas();
    let (u, v) = (s.u.coeffs(), s.v.coeffs());

    let mut drift = -w * vg;
    let mut qv = 0.0;
    for i in 0..k {
        let a = alpha[i];
        let aug = a * u[i] + g[i];
        drift += -a * v[i] * v[i] - 2.0 * a * v[i] * g[i] - aug * aug + lambdas[i].powi(2) * a;
        let grad = 2.0 * a * v[i] + a * u[i] + g[i];
        qv += lambdas[i].powi(2) * grad * grad;
    }
    // 1/2 sum_k lambda_k^2 int phi''(v) e_k^2.
    if !matches!(nl, Nonlinearity::Zero) {
        let mut tr = 0.0;
        for j in 0..m {
            if curv[j] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for i in 0..k {
                let e = basis.basis_value(j, i + 1);
                row += lambdas[i] * lambdas[i] * e * e;
            }
            tr += curv[j] * row;
        }
        drift += 0.5 * w * tr;
    }
    let phi = quadratic_phi(alpha, u, v) + w * phi_sum;
    if !(phi.is_finite() && drift.is_finite() && qv.is_finite()) {
        return Err(Error::NonFinite("generator evaluation overflowed".into()));
    }
    Ok(GeneratorTerms { phi, drift, quadratic_variation: qv })
}

/// `L Phi(U)`.
pub fn generator_phi(spec: &ModelSpec, s: &State) -> Result<f64> {
    Ok(generator_terms(spec, s)?.drift)
}

/// `L Phi^n = n Phi^{n-1} L Phi + 1/2 n (n-1) Phi^{n-2} sum_k lambda_k^2 <2Av + Au + phi'(v), e_k>^2`.
pub fn generator_phi_pow(spec: &ModelSpec, s: &State, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(domain("power must be at least 1"));
    }
    let t = generator_terms(spec, s)?;
    Ok(pow_from_terms(&t, n))
}

pub(crate) fn pow_from_terms(t: &GeneratorTerms, n: u32) -> f64 {
    let nf = n as f64;
    let first = if n == 1 { t.drift } else { nf * t.phi.powi(n as i32 - 1) * t.drift };
    let pref = 0.5 * nf * (nf - 1.0) * t.quadratic_variation;
    // Phi^{n-2} is only evaluated when its prefactor is non-zero.
    let second = if pref == 0.0 { 0.0 } else { pref * t.phi.powi(n as i32 - 2) };
    first + second
}

/// Outcome of one inequality of the damping assumptions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub holds: bool,
    pub witness: Option<f64>,
    pub violating_x: Option<f64>,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    Symbolic,
    Sampled,
}

/// Report of [`validate_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dimension: u32,
    pub family: &'static str,
    pub lambda: f64,
    pub lambda_range_ok: bool,
    pub lambda_range: String,
    pub certification: Certification,
    pub sample_radius: f64,
    pub origin_ok: bool,
    pub phi_nonnegative: bool,
    pub conditions: Vec<ConditionCheck>,
    /// `(a1, a2, a3, a4, a5)` when every condition holds.
    pub witnesses: Option<[f64; 5]>,
    pub trace_qq: TraceSeries,
    pub trace_qaq: TraceSeries,
    pub trace_qa2q: TraceSeries,
}

impl ValidationReport {
    pub fn noise_ok(&self) -> bool {
        self.trace_qq.converges && self.trace_qaq.converges
    }

    pub fn damping_ok(&self) -> bool {
        self.origin_ok && self.conditions.iter().all(|c| c.holds)
    }

    pub fn is_valid(&self) -> bool {
        self.lambda_range_ok && self.damping_ok() && self.noise_ok()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |b: bool| if b { "ok" } else { "VIOLATED" };
        writeln!(f, "noise operator Q")?;
        writeln!(
            f,
            "  Tr(QQ*)      partial {:.9}  tail <= {:.3e}  [{}]",
            self.trace_qq.partial,
            self.trace_qq.tail_bound,
            mark(self.trace_qq.converges)
        )?;
        writeln!(
            f,
            "  Tr(QAQ)      partial {:.9}  tail <= {:.3e}  [{}]",
            self.trace_qaq.partial,
            self.trace_qaq.tail_bound,
            mark(self.trace_qaq.converges)
        )?;
        writeln!(
            f,
            "  sum l^2 a^2  partial {:.9}  tail <= {:.3e}  [{}]",
            self.trace_qa2q.partial,
            self.trace_qa2q.tail_bound,
            if self.trace_qa2q.converges { "ok" } else { "diverges" }
        )?;
        writeln!(f, "damping phi ({}, lambda = {}, {:?} on |x| <= {})", self.family, self.lambda, self.certification, self.sample_radius)?;
        writeln!(f, "  phi(0) = phi'(0) = 0   [{}]", mark(self.origin_ok))?;
        for c in &self.conditions {
            match (c.witness, c.violating_x) {
                (Some(w), _) if c.holds => writeln!(f, "  {:<28} witness {w}  [ok]", c.name)?,
                (_, Some(x)) => writeln!(f, "  {:<28} fails at x = {x}: {}  [VIOLATED]", c.name, c.note)?,
                _ => writeln!(f, "  {:<28} {}  [{}]", c.name, c.note, mark(c.holds))?,
            }
        }
        writeln!(f, "  lambda range for d = {}: {}  [{}]", self.dimension, self.lambda_range, mark(self.lambda_range_ok))?;
        match self.witnesses {
            Some(a) => writeln!(f, "witnesses (a1..a5) = ({}, {}, {}, {}, {})", a[0], a[1], a[2], a[3], a[4])?,
            None => writeln!(f, "witnesses: none")?,
        }
        write!(f, "verdict: {}", if self.is_valid() { "VALID" } else { "INVALID" })
    }
}

pub const DEFAULT_SAMPLE_RADIUS: f64 = 1e3;

fn lambda_range(d: u32) -> Option<(f64, f64, bool)> {
    // (lo, hi, hi inclusive)
    match d {
        1 => Some((1.0, 3.0, true)),
        2 => Some((1.0, 3.0, false)),
        3 => Some((1.0, 2.0, true)),
        _ => None,
    }
}

fn sample_points(radius: f64) -> Vec<f64> {
    let mut xs = Vec::new();
    let n = 4000;
    for i in 0..=n {
        xs.push(-radius + 2.0 * radius * i as f64 / n as f64);
    }
    let decades = 12.0 + radius.log10();
    let m = 600;
    for i in 0..=m {
        let x = radius * 10f64.powf(-decades * i as f64 / m as f64);
        xs.push(x);
        xs.push(-x);
    }
    xs.push(0.0);
    xs
}

/// Certify the noise and damping hypotheses for spatial dimension `d`.
pub fn validate_assumptions(spec: &ModelSpec, dimension: u32) -> ValidationReport {
    validate_with_radius(spec, dimension, DEFAULT_SAMPLE_RADIUS)
}

pub fn validate_with_radius(spec: &ModelSpec, dimension: u32, radius: f64) -> ValidationReport {
    let nl = spec.nonlinearity;
    let lambda = nl.lambda();
    let (lambda_range_ok, lambda_range) = match lambda_range(dimension) {
        Some((lo, hi, incl)) => {
            let ok = lambda >= lo && if incl { lambda <= hi } else { lambda < hi };
            (ok, format!("[{lo}, {hi}{}", if incl { "]" } else { ")" }))
        }
        None => (false, format!("unsupported dimension {dimension}")),
    };
    let xs = sample_points(radius);
    let origin_ok = nl.phi(0.0) == 0.0 && nl.dphi(0.0) == 0.0;
    let phi_nonnegative = xs.iter().all(|&x| nl.phi(x) >= 0.0);

    let (certification, candidate) = match nl {
        Nonlinearity::Power { lambda } => {
            let a5 = if lambda == 1.0 { 1.0 } else { 0.0 };
            (Certification::Symbolic, [1.0, 1.0, 0.0, lambda, a5])
        }
        _ => (Certification::Sampled, sampled_witnesses(&nl, &xs, radius)),
    };
    let [a1, a2, a3, a4, a5] = candidate;
    let tol = |rhs: f64| 1e-12 * rhs.abs().max(1.0);

    let mut conditions = Vec::new();
    let worst = |f: &dyn Fn(f64) -> f64| -> Option<f64> {
        // Largest violation of f(x) >= 0.
        let mut bad: Option<(f64, f64)> = None;
        for &x in &xs {
            let r = f(x);
            if r < 0.0 && bad.map_or(true, |(_, b)| r < b) {
                bad = Some((x, r));
            }
        }
        bad.map(|b| b.0)
    };

    let growth = worst(&|x| {
        let rhs = a1 * (1.0 + x.abs().powf(lambda));
        rhs - nl.dphi(x).abs() + tol(rhs)
    });
    conditions.push(ConditionCheck {
        name: "|phi'(x)| <= a1(1+|x|^l)",
        holds: growth.is_none() && a1.is_finite(),
        witness: Some(a1),
        violating_x: growth,
        note: "growth bound".into(),
    });

    let coercive_x = if a2 > 0.0 {
        worst(&|x| {
            let rhs = a2 * x.abs().powf(lambda + 1.0) - a3;
            x * nl.dphi(x) - rhs + tol(rhs)
        })
    } else {
        Some(radius)
    };
    conditions.push(ConditionCheck {
        name: "x phi'(x) >= a2|x|^(l+1) - a3",
        holds: coercive_x.is_none(),
        witness: if a2 > 0.0 { Some(a2) } else { None },
        violating_x: coercive_x,
        note: if a2 > 0.0 {
            format!("a3 = {a3}")
        } else {
            format!("no positive a2: x phi'(x) / |x|^(l+1) tends to {a2}")
        },
    });

    let curv_x = worst(&|x| {
        let rhs = a4 * (x.abs().powf(lambda - 1.0) + 1.0);
        rhs - nl.ddphi(x).abs() + tol(rhs)
    });
    conditions.push(ConditionCheck {
        name: "|phi''(x)| <= a4(|x|^(l-1)+1)",
        holds: curv_x.is_none() && a4.is_finite(),
        witness: Some(a4),
        violating_x: curv_x,
        note: "curvature bound".into(),
    });

    let inf_x = if a5 > -1.0 {
        worst(&|x| nl.ddphi(x) - a5 + tol(a5))
    } else {
        xs.iter().copied().min_by(|p, q| nl.ddphi(*p).total_cmp(&nl.ddphi(*q)))
    };
    conditions.push(ConditionCheck {
        name: "inf phi'' = a5 > -1",
        holds: inf_x.is_none() && a5 > -1.0,
        witness: Some(a5),
        violating_x: inf_x,
        note: format!("inf phi'' = {a5}"),
    });

    let witnesses = if origin_ok && conditions.iter().all(|c| c.holds) { Some(candidate) } else { None };
    ValidationReport {
        dimension,
        family: nl.family_name(),
        lambda,
        lambda_range_ok,
        lambda_range,
        certification,
        sample_radius: radius,
        origin_ok,
        phi_nonnegative,
        conditions,
        witnesses,
        trace_qq: spec.trace_series(0.0),
        trace_qaq: spec.trace_series(1.0),
        trace_qa2q: spec.trace_series(2.0),
    }
}

fn sampled_witnesses(nl: &Nonlinearity, xs: &[f64], radius: f64) -> [f64; 5] {
    let l = nl.lambda();
    let mut a1: f64 = 0.0;
    let mut a4: f64 = 0.0;
    let mut a5 = f64::INFINITY;
    let mut a2 = f64::INFINITY;
    for &x in xs {
        a1 = a1.max(nl.dphi(x).abs() / (1.0 + x.abs().powf(l)));
        a4 = a4.max(nl.ddphi(x).abs() / (x.abs().powf(l - 1.0) + 1.0));
        a5 = a5.min(nl.ddphi(x));
        if x.abs() >= 0.1 * radius {
            a2 = a2.min(x * nl.dphi(x) / x.abs().powf(l + 1.0));
        }
    }
    // Round the sampled suprema and infima outward slightly.
    let a1 = a1 * (1.0 + 1e-9);
    let a4 = a4 * (1.0 + 1e-9);
    let a2 = if a2 > 0.0 { a2 * (1.0 - 1e-9) } else { a2 };
    let mut a3: f64 = 0.0;
    if a2 > 0.0 {
        for &x in xs {
            a3 = a3.max(a2 * x.abs().powf(l + 1.0) - x * nl.dphi(x));
        }
        a3 *= 1.0 + 1e-9;
    }
    [a1, a2, a3, a4, a5]
}

/// Quadrature of a scalar function on the basis grid, for callers that need
/// `int f(v(x)) dx` of a spectral field.
pub fn grid_integral(spec: &ModelSpec, f: &SpectralField, g: impl Fn(f64) -> f64) -> Result<f64> {
    let grid = spec.basis().field_to_grid(f)?;
    Ok(spec.basis().weight() * grid.into_iter().map(g).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn default_model_is_valid_in_one_dimension() {
        let r = validate_assumptions(&ModelSpec::default_model(), 1);
        assert!(r.is_valid(), "{r}");
        assert_eq!(r.witnesses, Some([1.0, 1.0, 0.0, 3.0, 0.0]));
        assert_eq!(r.certification, Certification::Symbolic);
        assert!(r.phi_nonnegative);
    }

    #[test]
    fn cubic_damping_rejected_in_three_dimensions() {
        let r = validate_assumptions(&ModelSpec::default_model(), 3);
        assert!(!r.lambda_range_ok);
        assert!(!r.is_valid());
        assert!(r.damping_ok());
        let r2 = validate_assumptions(&ModelSpec::default_model(), 2);
        assert!(!r2.lambda_range_ok);
    }

    #[test]
    fn anti_damping_is_rejected() {
        let spec = ModelSpec::default_model().with_nonlinearity(Nonlinearity::Linear { slope: -1.0 });
        let r = validate_assumptions(&spec, 1);
        let c = &r.conditions[1];
        assert!(!c.holds);
        assert!(c.violating_x.is_some());
        assert!(!r.is_valid());
    }

    #[test]
    fn smoothed_family_sampled_certificate() {
        let nl = Nonlinearity::smooth_power(2.5, 0.5).unwrap();
        let spec = ModelSpec::default_model().with_nonlinearity(nl);
        let r = validate_assumptions(&spec, 1);
        assert_eq!(r.certification, Certification::Sampled);
        assert!(r.is_valid(), "{r}");
        let a = r.witnesses.unwrap();
        assert!(a[1] >= 1.0 && a[1] < 1.01);
        assert!(a[4] > 0.0);
    }

    #[test]
    fn trace_of_default_noise() {
        let spec = ModelSpec::default_model();
        let t = spec.trace_series(1.0);
        // zeta(4) = pi^4 / 90.
        let zeta4 = PI.powi(4) / 90.0;
        assert!((t.estimate - zeta4).abs() < 1e-8);
        assert!((t.partial - zeta4).abs() <= t.tail_bound);
        assert!((spec.trace_qaq() - t.partial).abs() < 1e-15);
        assert!((t.partial - 1.082323).abs() < 1e-5);
        assert!(validate_assumptions(&spec, 1).trace_qa2q.converges);
        let slow = ModelSpec::default_model()
            .with_noise(NoiseSpec::power_law(1.0, 1.0, DEFAULT_MODES).unwrap())
            .unwrap();
        assert!(!slow.trace_series(1.0).converges);
    }

    #[test]
    fn phi_functionals_of_first_mode() {
        let nl = Nonlinearity::default();
        let z = phi_functionals(&nl, &SpectralField::zeros(16, PI)).unwrap();
        assert_eq!((z.l1_phi, z.dphi_sq, z.f_dphi, z.grad_term), (0.0, 0.0, 0.0, 0.0));
        let c = 1.7;
        let f = SpectralField::mode(16, 1, c, PI);
        let p = phi_functionals(&nl, &f).unwrap();
        let s = (2.0 / PI).sqrt();
        let sin4 = simpson(|x| x.sin().powi(4), 0.0, PI, 20_000);
        assert!((sin4 - 3.0 * PI / 8.0).abs() < 1e-12);
        assert!((p.f_dphi - 3.0 * c.powi(4) / (2.0 * PI)).abs() < 1e-12);
        assert!((p.l1_phi - 3.0 * c.powi(4) / (8.0 * PI)).abs() < 1e-12);
        let grad = simpson(|x| 3.0 * (c * s * x.sin()).powi(2) * (c * s * x.cos()).powi(2), 0.0, PI, 20_000);
        assert!((p.grad_term - grad).abs() < 1e-10);
        let dsq = simpson(|x| (c * s * x.sin()).powi(6), 0.0, PI, 20_000);
        assert!((p.dphi_sq - dsq).abs() < 1e-10);
        assert!(p.finite);
    }

    #[test]
    fn big_phi_examples() {
        let spec = ModelSpec::default_model();
        assert_eq!(big_phi(&spec, &spec.zero_state()).unwrap(), 0.0);
        assert!((big_phi(&spec, &spec.mode_state(1, 1.0)).unwrap() - 1.5).abs() < 1e-14);
        let mut s = spec.zero_state();
        s.v.coeffs_mut()[0] = 1.0;
        let expect = 1.0 + 3.0 / (8.0 * PI);
        assert!((big_phi(&spec, &s).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 1.11937).abs() < 1e-5);
        let mut bad = spec.zero_state();
        bad.u.coeffs_mut()[3] = f64::NAN;
        assert!(big_phi(&spec, &bad).is_err());
    }

    #[test]
    fn big_phi_dominates_energy() {
        let spec = ModelSpec::default_model();
        for i in 0..200 {
            let s = State::random(64, PI, 9, i, 3.0, 1.0);
            let phi = big_phi(&spec, &s).unwrap();
            assert!(phi >= 0.5 * (s.u.sobolev_norm_sq(1.0) + s.v.sobolev_norm_sq(0.0)));
        }
    }

    #[test]
    fn generator_at_rest_is_trace() {
        let spec = ModelSpec::default_model();
        let z = spec.zero_state();
        let l = generator_phi(&spec, &z).unwrap();
        assert!((l - spec.trace_qaq()).abs() < 1e-14);
        assert_eq!(generator_phi_pow(&spec, &z, 2).unwrap(), 0.0);
        assert_eq!(generator_phi_pow(&spec, &z, 4).unwrap(), 0.0);
    }

    #[test]
    fn generator_with_zero_velocity() {
        let spec = ModelSpec::default_model();
        let mut s = State::random(64, PI, 4, 0, 1.0, 2.0);
        s.v = SpectralField::zeros(64, PI);
        let au: f64 = s.u.sobolev_norm_sq(2.0);
        let expect = spec.trace_qaq() - au;
        assert!((generator_phi(&spec, &s).unwrap() - expect).abs() < 1e-10 * au.max(1.0));
        let lin = spec.with_nonlinearity(Nonlinearity::Linear { slope: 2.0 });
        let expect = lin.trace_qaq() - (0..64).map(|k| (lin.eigenvalues()[k] * s.u.coeffs()[k]).powi(2)).sum::<f64>()
            + 0.5 * 2.0 * lin.trace_qq();
        assert!((generator_phi(&lin, &s).unwrap() - expect).abs() < 1e-10 * au.max(1.0));
    }

    #[test]
    fn generator_single_mode_without_noise() {
        // Phi = 1.5 u^2 + v^2 + uv; dPhi/dt along (v, -u - v) is -u^2 - v^2.
        let noise = NoiseSpec::zero(1);
        let spec = ModelSpec::new(PI, 1, Nonlinearity::Zero, noise).unwrap();
        let s = State::new(SpectralField::new(vec![0.8], PI).unwrap(), SpectralField::new(vec![-0.3], PI).unwrap()).unwrap();
        let l = generator_phi(&spec, &s).unwrap();
        assert!((l + 0.64 + 0.09).abs() < 1e-14);
    }

    #[test]
    fn pow_reduces_to_first_power() {
        let spec = ModelSpec::default_model();
        for i in 0..10 {
            let s = State::random(64, PI, 1, i, 1.0, 1.5);
            assert_eq!(generator_phi_pow(&spec, &s, 1).unwrap(), generator_phi(&spec, &s).unwrap());
        }
        assert!(generator_phi_pow(&spec, &spec.zero_state(), 0).is_err());
    }

    #[test]
    fn generator_agrees_with_finite_difference_drift() {
        // Deterministic part: directional derivative of Phi along the drift
        // field, computed by central differences. The Ito correction is added
        // separately from the noise spectrum.
        let spec = ModelSpec::default_model();
        let s = State::random(64, PI, 21, 3, 0.6, 2.0);
        let basis = spec.basis();
        let drift_field = |st: &State| -> (Vec<f64>, Vec<f64>) {
            let mut grid = vec![0.0; basis.grid_len()];
            basis.to_grid(st.v.coeffs(), &mut grid);
            let d: Vec<f64> = grid.iter().map(|x| spec.nonlinearity().dphi(*x)).collect();
            let mut g = vec![0.0; 64];
            basis.from_grid(&d, &mut g);
            let du = st.v.coeffs().to_vec();
            let dv = (0..64)
                .map(|k| -spec.eigenvalues()[k] * st.u.coeffs()[k] - st.v.coeffs()[k] - g[k])
                .collect();
            (du, dv)
        };
        let (du, dv) = drift_field(&s);
        let h = 1e-6;
        let shift = |sgn: f64| {
            let mut t = s.clone();
            for k in 0..64 {
                t.u.coeffs_mut()[k] += sgn * h * du[k];
                t.v.coeffs_mut()[k] += sgn * h * dv[k];
            }
            big_phi(&spec, &t).unwrap()
        };
        let det = (shift(1.0) - shift(-1.0)) / (2.0 * h);
        let mut grid = vec![0.0; basis.grid_len()];
        basis.to_grid(s.v.coeffs(), &mut grid);
        let mut ito = 0.0;
        for k in 0..64 {
            let l2 = spec.noise().lambdas()[k].powi(2);
            let curv: f64 = grid
                .iter()
                .enumerate()
                .map(|(j, x)| spec.nonlinearity().ddphi(*x) * basis.basis_value(j, k + 1).powi(2))
                .sum::<f64>()
                * basis.weight();
            ito += 0.5 * l2 * (2.0 * spec.eigenvalues()[k] + curv);
        }
        let l = generator_phi(&spec, &s).unwrap();
        assert!((l - (det + ito)).abs() < 1e-5 * l.abs().max(1.0), "{l} vs {}", det + ito);
    }

    #[test]
    fn damping_flow_solves_ode() {
        for nl in [
            Nonlinearity::default(),
            Nonlinearity::power(2.2).unwrap(),
            Nonlinearity::power(1.0).unwrap(),
            Nonlinearity::Linear { slope: 0.7 },
        ] {
            for &v0 in &[-3.0, -0.4, 0.0, 0.9, 5.0] {
                // RK4 with many substeps as an oracle.
                let h = 0.05;
                let n = 20_000;
                let dt = h / n as f64;
                let mut v: f64 = v0;
                for _ in 0..n {
                    let k1 = -nl.dphi(v);
                    let k2 = -nl.dphi(v + 0.5 * dt * k1);
                    let k3 = -nl.dphi(v + 0.5 * dt * k2);
                    let k4 = -nl.dphi(v + dt * k3);
                    v += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                assert!((nl.damping_flow(h, v0) - v).abs() < 1e-11, "{nl:?} {v0}");
            }
        }
    }

    #[test]
    fn damping_slope_and_difference() {
        let nls = [
            Nonlinearity::default(),
            Nonlinearity::power(1.7).unwrap(),
            Nonlinearity::smooth_power(3.0, 0.3).unwrap(),
            Nonlinearity::Linear { slope: 1.0 },
            Nonlinearity::Zero,
        ];
        for nl in nls {
            for &a in &[-2.0, -0.1, 0.3, 1.5, 12.0] {
                let h = 0.01;
                let e = 1e-6;
                let fd = (nl.damping_flow(h, a + e) - nl.damping_flow(h, a - e)) / (2.0 * e);
                assert!((fd - nl.damping_slope(h, a)).abs() < 1e-7, "{nl:?} {a}");
                let s = nl.damping_slope(h, a);
                assert!(s.abs() <= 1.0 + 1e-15);
                for &d in &[1e-14, 1e-9, 1e-4, 0.5] {
                    let direct = nl.damping_flow(h, a) - nl.damping_flow(h, a - d);
                    let stable = nl.damping_difference(h, a, d);
                    assert!((direct - stable).abs() <= 1e-15 * a.abs().max(1.0) * 4.0 + 1e-12 * d.abs());
                    assert!(stable.abs() <= d.abs() * (1.0 + 1e-14));
                }
            }
        }
    }

    #[test]
    fn smooth_power_derivatives() {
        let nl = Nonlinearity::smooth_power(2.5, 0.4).unwrap();
        for &x in &[-2.0, -0.3, 0.0, 0.8, 3.0] {
            let e = 1e-6;
            let d1 = (nl.phi(x + e) - nl.phi(x - e)) / (2.0 * e);
            let d2 = (nl.dphi(x + e) - nl.dphi(x - e)) / (2.0 * e);
            assert!((d1 - nl.dphi(x)).abs() < 1e-7);
            assert!((d2 - nl.ddphi(x)).abs() < 1e-7);
        }
        assert_eq!(nl.phi(0.0), 0.0);
    }

    #[test]
    fn constructor_errors() {
        assert!(Nonlinearity::power(0.5).is_err());
        assert!(Nonlinearity::smooth_power(2.0, 0.0).is_err());
        assert!(NoiseSpec::power_law(-1.0, 3.0, 4).is_err());
        assert!(NoiseSpec::from_values(vec![1.0, -0.1]).is_err());
        let noise = NoiseSpec::zero(3);
        assert!(ModelSpec::new(PI, 4, Nonlinearity::Zero, noise).is_err());
        let spec = ModelSpec::default_model();
        assert!(big_phi(&spec, &State::zeros(8, PI)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn phi_increases_along_rays(seed in 0u64..1000, s in 0.1f64..0.95) {
                let spec = ModelSpec::default_model();
                let st = State::random(64, PI, seed, 0, 2.0, 1.0);
                let a = big_phi(&spec, &st.scaled(s)).unwrap();
                let b = big_phi(&spec, &st).unwrap();
                prop_assert!(a <= b);
            }

            #[test]
            fn quadratic_variation_nonnegative(seed in 0u64..1000) {
                let spec = ModelSpec::default_model();
                let st = State::random(64, PI, seed, 1, 1.0, 1.0);
                let t = generator_terms(&spec, &st).unwrap();
                prop_assert!(t.quadratic_variation >= 0.0);
            }
        }
    }
}
