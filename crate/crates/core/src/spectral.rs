//! Dirichlet spectral calculus on the interval `(0, L)`.
//!
//! Fields are stored as coefficients in the orthonormal sine basis
//! `e_k(x) = sqrt(2/L) sin(k pi x / L)`, `k = 1..=K`, which diagonalizes the
//! Dirichlet Laplacian with eigenvalues `alpha_k = (k pi / L)^2`.
//!
//! Grid evaluation uses the `M = oversample * K` interior points
//! `x_j = j L / (M + 1)`, `j = 1..=M`. With the uniform weight `L / (M + 1)`
//! the sampled basis is exactly orthonormal (discrete sine transform of type I),
//! so `from_grid(to_grid(f)) == f` and Parseval holds to rounding. Because the
//! endpoints vanish, this quadrature coincides with the trapezoid rule and is
//! exact for trigonometric polynomials of degree below `2 (M + 1)`; with
//! `oversample = 2` cubic products of `K`-mode fields are projected without
//! aliasing.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};

/// Dirichlet eigenvalue `alpha_k = (k pi / L)^2`.
pub fn eigenvalue(k: usize, length: f64) -> Result<f64> {
    if k == 0 {
        return Err(domain("eigenvalue index starts at 1"));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(domain(format!("domain length must be positive, got {length}")));
    }
    let w = k as f64 * PI / length;
    Ok(w * w)
}

/// A function on `(0, L)` given by its first `K` sine coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
    length: f64,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>, length: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(domain(format!("domain length must be positive, got {length}")));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient {} is {}", i + 1, coeffs[i])));
        }
        Ok(Self { coeffs, length })
    }

    pub fn zeros(modes: usize, length: f64) -> Self {
        Self { coeffs: vec![0.0; modes], length }
    }

    /// `amplitude * e_index` (1-based index).
    pub fn mode(modes: usize, index: usize, amplitude: f64, length: f64) -> Self {
        let mut f = Self::zeros(modes, length);
        if index >= 1 && index <= modes {
            f.coeffs[index - 1] = amplitude;
        }
        f
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `||f||^2_{H^r} = sum_k alpha_k^r c_k^2`.
    pub fn sobolev_norm_sq(&self, r: f64) -> f64 {
        self.sobolev_inner(self, r)
    }

    /// `<f, g>_{H^r} = sum_k alpha_k^r f_k g_k`.
    pub fn sobolev_inner(&self, other: &SpectralField, r: f64) -> f64 {
        let base = PI / self.length;
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(i, (a, b))| {
                let alpha = ((i + 1) as f64 * base).powi(2);
                weight(alpha, r) * a * b
            })
            .sum()
    }

    /// `||f||_{L^p}` by grid quadrature.
    pub fn lebesgue_norm(&self, p: f64, oversample: usize) -> Result<f64> {
        let basis = SpectralBasis::new(self.modes(), self.length, oversample)?;
        basis.lebesgue_norm(self.coeffs(), p)
    }

    pub fn add_scaled(&mut self, other: &SpectralField, scale: f64) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += scale * b;
        }
    }
}

#[inline]
fn weight(alpha: f64, r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else if r == 1.0 {
        alpha
    } else if r == 2.0 {
        alpha * alpha
    } else if r == -1.0 {
        1.0 / alpha
    } else {
        alpha.powf(r)
    }
}

/// Precomputed sine (and derivative) tables for one `(K, L, oversample)`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    modes: usize,
    length: f64,
    grid_len: usize,
    weight: f64,
    eigenvalues: Vec<f64>,
    // Row-major `grid_len x modes`: e_k(x_j).
    sine: Vec<f64>,
    // Row-major `grid_len x modes`: e_k'(x_j).
    cosine: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(modes: usize, length: f64, oversample: usize) -> Result<Self> {
        if modes == 0 {
            return Err(domain("at least one mode is required"));
        }
        if oversample == 0 {
            return Err(domain("oversample must be at least 1"));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(domain(format!("domain length must be positive, got {length}")));
        }
        let grid_len = oversample * modes;
        let intervals = grid_len + 1;
        let period = 2 * intervals;
        let norm = (2.0 / length).sqrt();
        let mut sine = vec![0.0; grid_len * modes];
        let mut cosine = vec![0.0; grid_len * modes];
        for j in 1..=grid_len {
            for k in 1..=modes {
                // Reduce the phase index exactly before calling sin/cos.
                let r = (j * k) % period;
                let phase = PI * r as f64 / intervals as f64;
                let wave = k as f64 * PI / length;
                sine[(j - 1) * modes + (k - 1)] = norm * phase.sin();
                cosine[(j - 1) * modes + (k - 1)] = norm * wave * phase.cos();
            }
        }
        let eigenvalues = (1..=modes)
            .map(|k| (k as f64 * PI / length).powi(2))
            .collect();
        Ok(Self {
            modes,
            length,
            grid_len,
            weight: length / intervals as f64,
            eigenvalues,
            sine,
            cosine,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    /// Quadrature weight attached to every grid point.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (1..=self.grid_len)
            .map(|j| j as f64 * self.weight)
            .collect()
    }

    /// Value of basis function `k` (1-based) at grid point `j` (0-based).
    pub fn basis_value(&self, j: usize, k: usize) -> f64 {
        self.sine[j * self.modes + (k - 1)]
    }

    pub fn to_grid(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.modes);
        debug_assert_eq!(out.len(), self.grid_len);
        for (row, o) in self.sine.chunks_exact(self.modes).zip(out.iter_mut()) {
            *o = dot(row, coeffs);
        }
    }

    /// Grid values of the spatial derivative of the field.
    pub fn derivative_to_grid(&self, coeffs: &[f64], out: &mut [f64]) {
        for (row, o) in self.cosine.chunks_exact(self.modes).zip(out.iter_mut()) {
            *o = dot(row, coeffs);
        }
    }

    /// Discrete projection onto the first `K` modes.
    pub fn from_grid(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.grid_len);
        debug_assert_eq!(out.len(), self.modes);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &f) in self.sine.chunks_exact(self.modes).zip(values) {
            for (o, s) in out.iter_mut().zip(row) {
                *o += s * f;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.weight);
    }

    pub fn field_to_grid(&self, f: &SpectralField) -> Result<Vec<f64>> {
        if f.modes() != self.modes {
            return Err(Error::Shape { expected: self.modes, got: f.modes() });
        }
        let mut out = vec![0.0; self.grid_len];
        self.to_grid(f.coeffs(), &mut out);
        Ok(out)
    }

    pub fn field_from_grid(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.grid_len {
            return Err(Error::Shape { expected: self.grid_len, got: values.len() });
        }
        let mut out = vec![0.0; self.modes];
        self.from_grid(values, &mut out);
        SpectralField::new(out, self.length)
    }

    /// `int_0^L g(x) dx` for grid samples of `g`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weight * values.iter().sum::<f64>()
    }

    pub fn lebesgue_norm(&self, coeffs: &[f64], p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(domain(format!("L^p norm requires p >= 1, got {p}")));
        }
        let mut grid = vec![0.0; self.grid_len];
        self.to_grid(coeffs, &mut grid);
        Ok(lebesgue_from_grid(&grid, self.weight, p))
    }
}

// Four independent accumulators let the compiler vectorize the reduction.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn lebesgue_from_grid(grid: &[f64], weight: f64, p: f64) -> f64 {
    let integral: f64 = if p == 2.0 {
        grid.iter().map(|g| g * g).sum()
    } else if p == 4.0 {
        grid.iter().map(|g| (g * g) * (g * g)).sum()
    } else {
        grid.iter().map(|g| g.abs().powf(p)).sum()
    };
    (weight * integral).powf(1.0 / p)
}

/// Grid values of `f` at `oversample * K` interior points.
pub fn to_grid(f: &SpectralField, oversample: usize) -> Result<Vec<f64>> {
    SpectralBasis::new(f.modes(), f.length(), oversample)?.field_to_grid(f)
}

/// Projection of grid values onto `modes` sine modes on `(0, length)`.
pub fn from_grid(values: &[f64], modes: usize, length: f64) -> Result<SpectralField> {
    if modes == 0 || values.len() % modes != 0 {
        return Err(Error::Shape {
            expected: modes * (values.len() / modes.max(1)).max(1),
            got: values.len(),
        });
    }
    SpectralBasis::new(modes, length, values.len() / modes)?.field_from_grid(values)
}
