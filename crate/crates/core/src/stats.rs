//! Small statistics toolbox for the Monte Carlo estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Median of block means, with a standard error from the spread of the
/// blocks (`1.2533` is the asymptotic efficiency factor of the median).
pub fn median_of_means(xs: &[f64], blocks: usize) -> (f64, f64) {
    let n = xs.len();
    let b = blocks.clamp(1, n.max(1));
    if n < 2 * b {
        return mean_se(xs);
    }
    let size = n / b;
    let mut means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, se_blocks) = mean_se(&means);
    means.sort_by(f64::total_cmp);
    let med = if b % 2 == 1 { means[b / 2] } else { 0.5 * (means[b / 2 - 1] + means[b / 2]) };
    (med, 1.2533 * se_blocks)
}

/// Linear quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of `stat` over resampled indices.
pub fn bootstrap_ci<F>(n: usize, reps: usize, level: f64, seed: u64, mut stat: F) -> (f64, f64)
where
    F: FnMut(&[usize]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut vals: Vec<f64> = (0..reps)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    (quantile_sorted(&vals, a), quantile_sorted(&vals, 1.0 - a))
}

/// Weighted least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn fit_line(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(wt).sum();
    let mx = (0..n).map(|i| wt(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| wt(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| wt(i) * (x[i] - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = (0..n).map(|i| wt(i) * (x[i] - mx) * (y[i] - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = (0..n).map(|i| wt(i) * (y[i] - intercept - slope * x[i]).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit { slope, intercept, slope_se })
}

/// Run `f` for every path index in parallel; results keep index order.
pub fn par_paths<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}
