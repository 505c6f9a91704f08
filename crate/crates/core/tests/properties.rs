use std::f64::consts::PI;
use std::sync::Arc;

use ergowave::coupling::{couple_step, scale_to_level, CoupledPair};
use ergowave::integrator::{
    build_mode_flows, simulate, stationary_samples, DirectNoise, ModeIncrement, NoiseSource, Stepper, StepperConfig,
};
use ergowave::lyapunov::drift_verify;
use ergowave::model::{big_phi, generator_phi, ModelSpec, State};
use ergowave::stats::{mean_se, par_paths};
use ergowave::transport::{empirical_wd, evolve_ensemble};

fn start(spec: &ModelSpec, level: f64, seed: u64) -> State {
    let dir = State::random(spec.modes(), spec.length(), seed, 0, 1.0, 1.5);
    scale_to_level(spec, &dir, level).unwrap()
}

fn one_step_drift(spec: &ModelSpec, u0: &State, h: f64, pairs: u64) -> (f64, f64) {
    let mut st = Stepper::new(spec, StepperConfig::new(h, 21)).unwrap();
    let mut noise = st.noise(0);
    let mut incs = vec![ModeIncrement::default(); spec.modes()];
    let phi0 = big_phi(spec, u0).unwrap();
    let lambdas = spec.noise().lambdas().to_vec();
    // Antithetic pairs, with sum lambda^2 (dW^2 - h) / h (mean zero) as a
    // control variate for the second-order noise term.
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..pairs)
        .map(|i| {
            noise.increments(i, &mut incs);
            let mut a = u0.clone();
            let mut b = u0.clone();
            st.apply(&mut a, &incs, 1.0);
            st.apply(&mut b, &incs, -1.0);
            let x = (0.5 * (big_phi(spec, &a).unwrap() + big_phi(spec, &b).unwrap()) - phi0) / h;
            let y = incs.iter().zip(&lambdas).map(|(d, l)| l * l * (d.dw * d.dw - h)).sum::<f64>() / h;
            (x, y)
        })
        .unzip();
    let (mx, _) = mean_se(&xs);
    let (my, _) = mean_se(&ys);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = cov / var;
    let adjusted: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x - b * y).collect();
    mean_se(&adjusted)
}

#[test]
fn generator_matches_one_step_drift() {
    let spec = ModelSpec::default_model();
    let u0 = start(&spec, 2.0, 3);
    let exact = generator_phi(&spec, &u0).unwrap();
    for h in [1e-2, 1e-3] {
        let (est, se) = one_step_drift(&spec, &u0, h, 20000);
        assert!((est - exact).abs() < 4.0 * se, "h = {h}: {est} vs {exact} (se {se})");
    }
}

#[test]
fn exponential_martingale() {
    let spec = ModelSpec::default_model();
    let u0 = start(&spec, 1.0, 4);
    let cfg = StepperConfig::new(0.01, 8);
    let times = [1.0];
    let beta = 0.5;
    let diags = par_paths(2000, |p| Ok(simulate(&u0, &times, &spec, &cfg, p, beta)?.diagnostics)).unwrap();
    let z: Vec<f64> = diags.iter().map(|d| (d.martingale - 0.5 * d.bracket).exp()).collect();
    let (m, se) = mean_se(&z);
    assert!((m - 1.0).abs() < 4.0 * se, "E exp(M - <M>/2) = {m} +- {se}");
    for r in [0.5, 1.0, 2.0] {
        let hits = diags.iter().filter(|d| d.martingale - 0.5 * d.bracket >= r).count() as f64 / diags.len() as f64;
        let bound = (-r as f64).exp();
        assert!(hits <= bound + 3.0 * (bound / diags.len() as f64).sqrt(), "R = {r}: {hits} > {bound}");
    }
}

#[test]
fn stationary_energy_balance() {
    // At stationarity E[||v||^2 + <v, phi'(v)>] = Tr(QQ*) / 2.
    let spec = ModelSpec::default_model();
    let cfg = StepperConfig::new(0.005, 31);
    let chains = 16;
    let samples = stationary_samples(&spec, &cfg, chains, 30.0, 0.5, chains * 120).unwrap();
    let values: Vec<f64> = samples
        .iter()
        .map(|s| {
            let f = spec.phi_functionals(&s.v).unwrap();
            s.v.sobolev_norm_sq(0.0) + f.f_dphi
        })
        .collect();
    // Samples are interleaved by chain; batch over chains.
    let chain_means: Vec<f64> = (0..chains)
        .map(|c| {
            let xs: Vec<f64> = values.iter().skip(c).step_by(chains).copied().collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        })
        .collect();
    let (m, se) = mean_se(&chain_means);
    let target = 0.5 * spec.trace_qq();
    assert!((m - target).abs() < 4.0 * se + 0.01 * target, "{m} +- {se} vs {target}");
}

#[test]
fn increment_covariance() {
    let spec = ModelSpec::default_model();
    let h = 0.01;
    let flows = Arc::new(build_mode_flows(&spec, h));
    let mut noise = DirectNoise::new(99, 0, flows.clone());
    let mut incs = vec![ModeIncrement::default(); spec.modes()];
    let n = 100_000;
    let watch = [0usize, 7, 63];
    let mut acc = vec![[[0.0; 3]; 3]; watch.len()];
    for step in 0..n {
        noise.increments(step, &mut incs);
        for (slot, &k) in watch.iter().enumerate() {
            let x = [incs[k].dw, incs[k].xu, incs[k].xv];
            for i in 0..3 {
                for j in 0..3 {
                    acc[slot][i][j] += x[i] * x[j];
                }
            }
        }
    }
    for (slot, &k) in watch.iter().enumerate() {
        let f = &flows.modes[k];
        let exact = [
            [h, f.cross[0], f.cross[1]],
            [f.cross[0], f.sigma[0][0], f.sigma[0][1]],
            [f.cross[1], f.sigma[1][0], f.sigma[1][1]],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let est = acc[slot][i][j] / n as f64;
                let se = ((exact[i][i] * exact[j][j] + exact[i][j] * exact[i][j]) / n as f64).sqrt();
                assert!((est - exact[i][j]).abs() < 5.0 * se + 1e-300, "mode {} ({i},{j}): {est} vs {}", k + 1, exact[i][j]);
            }
        }
    }
}

#[test]
fn empirical_wd_below_coupled_mean() {
    let spec = ModelSpec::default_model();
    let cfg = StepperConfig::new(0.01, 5);
    let n = 24;
    let a: Vec<State> = (0..n).map(|i| State::random(64, PI, 1, i, 2.0, 1.5)).collect();
    let b: Vec<State> = (0..n).map(|i| State::random(64, PI, 2, i, 2.0, 1.5)).collect();
    let flows = Arc::new(build_mode_flows(&spec, cfg.dt));
    let pairs = par_paths(n as usize, |p| {
        let mut st = Stepper::with_flows(&spec, cfg, flows.clone());
        let mut noise = st.noise(p);
        let mut pair = CoupledPair::new(&a[p as usize], &b[p as usize])?;
        for _ in 0..200 {
            couple_step(&mut pair, &mut st, &mut noise)?;
        }
        Ok(pair)
    })
    .unwrap();
    let left: Vec<State> = pairs.iter().map(|p| p.primary.clone()).collect();
    let right: Vec<State> = pairs.iter().map(|p| p.partner()).collect();
    let coupled_mean = pairs.iter().map(|p| p.distance()).sum::<f64>() / n as f64;
    let wd = empirical_wd(&left, &right).unwrap();
    assert!(wd <= coupled_mean * (1.0 + 1e-12), "{wd} > {coupled_mean}");
}

#[test]
fn markov_restart_consistency() {
    let spec = ModelSpec::default_model();
    let cfg = StepperConfig::new(0.01, 17);
    let u0 = start(&spec, 5.0, 6);
    let paths = 512;
    let direct = evolve_ensemble(&u0, &spec, &cfg, &[1.0, 2.0], paths, 0).unwrap();
    let restarted: Vec<State> = par_paths(paths, |p| {
        let mid = &direct[0][p as usize];
        let other = StepperConfig { seed: 1017, ..cfg };
        Ok(evolve_ensemble(mid, &spec, &other, &[1.0], 1, p)?.remove(0).remove(0))
    })
    .unwrap();
    for n in [1, 2] {
        let f = |s: &State| big_phi(&spec, s).unwrap().powi(n);
        let (m1, s1) = mean_se(&direct[1].iter().map(f).collect::<Vec<_>>());
        let (m2, s2) = mean_se(&restarted.iter().map(f).collect::<Vec<_>>());
        assert!((m1 - m2).abs() < 3.0 * (s1 * s1 + s2 * s2).sqrt(), "n = {n}: {m1} vs {m2}");
    }
}

#[test]
fn drift_envelope_bounds_curve() {
    let spec = ModelSpec::default_model();
    let cfg = StepperConfig::new(0.01, 23);
    let u0 = start(&spec, 10.0, 8);
    let r = drift_verify(&u0, 1, 0.25, 10.0, 128, &spec, &cfg).unwrap();
    assert!(r.feasible);
    let phi0 = big_phi(&spec, &u0).unwrap();
    let sup = r.e_phi_n.iter().cloned().fold(0.0, f64::max);
    assert!(sup <= phi0.max(r.big_c / r.c_max), "{sup} vs max({phi0}, {})", r.big_c / r.c_max);
    assert!(r.running_integral.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn sample_floor_shrinks_with_size() {
    let floor = |n: u64| {
        (0..4u64)
            .map(|rep| {
                let a: Vec<State> = (0..n).map(|i| State::random(16, PI, 100 + rep, i, 1.0, 1.0)).collect();
                let b: Vec<State> = (0..n).map(|i| State::random(16, PI, 200 + rep, i, 1.0, 1.0)).collect();
                empirical_wd(&a, &b).unwrap()
            })
            .sum::<f64>()
            / 4.0
    };
    let (f32, f64_, f128) = (floor(32), floor(64), floor(128));
    assert!(f32 > f64_ && f64_ > f128, "{f32} {f64_} {f128}");
}
