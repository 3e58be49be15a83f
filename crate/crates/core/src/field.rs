//! Periodic 4-D grids, complex scalar fields, spectral differentiation, and
//! deterministic quadrature.
//!
//! The model space is a product of two unit-square tori: a fiber torus with
//! coordinates (x₁, x₂), w = x₁ + i x₂, and a base torus with coordinates
//! (y₁, y₂), z = y₁ + i y₂. Samples are stored in index order
//! (y₁, y₂, x₁, x₂) so that one fiber is a contiguous slab.
//!
//! Complex derivatives use the convention ∂_w = ½(∂_{x₁} − i ∂_{x₂}); on the
//! Fourier mode e^{2πi(k₁x₁ + k₂x₂)} that is multiplication by π(k₂ + i k₁),
//! and the ∂_w∂_w̄ symbol is −π²(k₁² + k₂²). All differentiation is exact on
//! band-limited inputs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, Array4, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tol;

/// Sample counts for the product grid. Both axes of a factor share one count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid4 {
    pub n_fiber: usize,
    pub n_base: usize,
}

impl Grid4 {
    pub fn new(n_fiber: usize, n_base: usize) -> Result<Self> {
        for (name, n) in [("n_fiber", n_fiber), ("n_base", n_base)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{name} must be a power of two ≥ 8, got {n}"
                )));
            }
        }
        Ok(Grid4 { n_fiber, n_base })
    }

    /// Total sample count n_fiber² · n_base².
    pub fn len(&self) -> usize {
        self.n_fiber * self.n_fiber * self.n_base * self.n_base
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Array shape in index order (y₁, y₂, x₁, x₂).
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_base, self.n_base, self.n_fiber, self.n_fiber)
    }

    /// Cell volume of the product grid; both tori have unit area.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Largest frequency admissible for configured inputs (per axis).
    pub fn band_limit(&self) -> (i64, i64) {
        (self.n_fiber as i64 / 4, self.n_base as i64 / 4)
    }

    /// Coordinates of a grid point, each in [0, 1).
    pub fn point(&self, iy1: usize, iy2: usize, ix1: usize, ix2: usize) -> [f64; 4] {
        let nf = self.n_fiber as f64;
        let nb = self.n_base as f64;
        [
            iy1 as f64 / nb,
            iy2 as f64 / nb,
            ix1 as f64 / nf,
            ix2 as f64 / nf,
        ]
    }
}

/// Signed DFT frequency for bin `i` of an axis with `n` samples.
#[inline]
pub fn dft_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Deterministic pairwise summation; identical result regardless of
/// how callers are scheduled.
pub fn pairwise_sum(values: &[Complex64]) -> Complex64 {
    if values.len() <= 32 {
        let mut acc = Complex64::new(0.0, 0.0);
        for v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Pairwise summation for real slices.
pub fn pairwise_sum_f64(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum_f64(&values[..mid]) + pairwise_sum_f64(&values[mid..])
    }
}

pub(crate) fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().unwrap();
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place FFT along one axis of a 4-D array. The inverse carries the 1/n
/// normalization so that ifft(fft(x)) = x.
fn fft_axis4(values: &mut Array4<Complex64>, axis: usize, inverse: bool) {
    let n = values.shape()[axis];
    let fft = fft_plan(n, inverse);
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in values.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

fn fft_axis2(values: &mut Array2<Complex64>, axis: usize, inverse: bool) {
    let n = values.shape()[axis];
    let fft = fft_plan(n, inverse);
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in values.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b * scale;
        }
    }
}

/// Which axes an operator acts along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisSet {
    Fiber,
    Base,
    All,
}

/// Complex coordinate directions for first derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CDir {
    /// ∂_w (fiber holomorphic)
    W,
    /// ∂_w̄
    WBar,
    /// ∂_z (base holomorphic)
    Z,
    /// ∂_z̄
    ZBar,
}

/// Complex samples of a periodic function on the product grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid4,
    pub values: Array4<Complex64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid4) -> Self {
        let (a, b, c, d) = grid.shape();
        ScalarField {
            grid,
            values: Array4::zeros((a, b, c, d)),
        }
    }

    pub fn constant(grid: Grid4, value: f64) -> Self {
        let (a, b, c, d) = grid.shape();
        ScalarField {
            grid,
            values: Array4::from_elem((a, b, c, d), Complex64::new(value, 0.0)),
        }
    }

    /// Sample a closure of the point coordinates [y₁, y₂, x₁, x₂].
    pub fn from_fn(grid: Grid4, f: impl Fn([f64; 4]) -> f64) -> Self {
        let (nb, _, nf, _) = grid.shape();
        let mut values = Array4::zeros(grid.shape());
        for iy1 in 0..nb {
            for iy2 in 0..nb {
                for ix1 in 0..nf {
                    for ix2 in 0..nf {
                        values[[iy1, iy2, ix1, ix2]] =
                            Complex64::new(f(grid.point(iy1, iy2, ix1, ix2)), 0.0);
                    }
                }
            }
        }
        ScalarField { grid, values }
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.map(|v| f(*v)),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a = f(*a, *b));
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &ScalarField) -> Self {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        self.map(|v| v + s)
    }

    /// Largest |imaginary part| over the grid.
    pub fn max_imag(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.im.abs()))
    }

    /// Drop imaginary parts (caller asserts they are rounding noise).
    pub fn into_real(&self) -> Self {
        debug_assert!(self.max_imag() < 1e-8, "imag part {:.3e}", self.max_imag());
        self.map(|v| Complex64::new(v.re, 0.0))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Quadratic-mean norm: sqrt(mean |f|²).
    pub fn l2_norm(&self) -> f64 {
        let parts: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        (pairwise_sum_f64(&parts) / self.grid.len() as f64).sqrt()
    }

    /// Complex quadrature over the product torus (total volume 1):
    /// the deterministic pairwise mean of the samples.
    pub fn integrate_complex(&self) -> Complex64 {
        let slice = self.values.as_slice().expect("contiguous field values");
        pairwise_sum(slice) / self.grid.len() as f64
    }

    /// Quadrature of a real field; takes the real part of the complex mean.
    pub fn integrate(&self) -> f64 {
        self.integrate_complex().re
    }

    /// Forward full-grid DFT (unnormalized coefficients / N on inverse).
    pub fn fft(&self) -> Array4<Complex64> {
        let mut spec = self.values.clone();
        for axis in 0..4 {
            fft_axis4(&mut spec, axis, false);
        }
        spec
    }

    pub fn from_spectrum(grid: Grid4, mut spec: Array4<Complex64>) -> Self {
        for axis in 0..4 {
            fft_axis4(&mut spec, axis, true);
        }
        ScalarField { grid, values: spec }
    }

    /// Spectral first derivative in a complex coordinate direction.
    pub fn derivative(&self, dir: CDir) -> Self {
        let mut spec = self.fft();
        let (nb, _, nf, _) = self.grid.shape();
        for (idx, v) in spec.indexed_iter_mut() {
            let (iy1, iy2, ix1, ix2) = idx;
            let sym = match dir {
                CDir::W => {
                    let k1 = dft_freq(ix1, nf) as f64;
                    let k2 = dft_freq(ix2, nf) as f64;
                    Complex64::new(std::f64::consts::PI * k2, std::f64::consts::PI * k1)
                }
                CDir::WBar => {
                    let k1 = dft_freq(ix1, nf) as f64;
                    let k2 = dft_freq(ix2, nf) as f64;
                    Complex64::new(-std::f64::consts::PI * k2, std::f64::consts::PI * k1)
                }
                CDir::Z => {
                    let l1 = dft_freq(iy1, nb) as f64;
                    let l2 = dft_freq(iy2, nb) as f64;
                    Complex64::new(std::f64::consts::PI * l2, std::f64::consts::PI * l1)
                }
                CDir::ZBar => {
                    let l1 = dft_freq(iy1, nb) as f64;
                    let l2 = dft_freq(iy2, nb) as f64;
                    Complex64::new(-std::f64::consts::PI * l2, std::f64::consts::PI * l1)
                }
            };
            *v *= sym;
        }
        ScalarField::from_spectrum(self.grid, spec)
    }

    /// Solve the ∂∂̄-Laplacian along the selected axes:
    /// ∂_w∂_w̄φ (+ ∂_z∂_z̄φ) = ρ, returning the mean-zero representative.
    ///
    /// The Fourier symbol of the operator is −π²|k|² over the selected axes;
    /// bins with zero selected frequency are the kernel and must vanish in ρ.
    pub fn laplace_solve(&self, axes: AxisSet) -> Result<ScalarField> {
        let spec = self.fft();
        let (nb, _, nf, _) = self.grid.shape();
        // kernel bins = selected frequencies all zero
        let mut max_kernel = 0.0f64;
        for (idx, v) in spec.indexed_iter() {
            let (iy1, iy2, ix1, ix2) = idx;
            let kf = (dft_freq(ix1, nf), dft_freq(ix2, nf));
            let kb = (dft_freq(iy1, nb), dft_freq(iy2, nb));
            let in_kernel = match axes {
                AxisSet::Fiber => kf == (0, 0),
                AxisSet::Base => kb == (0, 0),
                AxisSet::All => kf == (0, 0) && kb == (0, 0),
            };
            if in_kernel {
                max_kernel = max_kernel.max(v.norm() / self.grid.len() as f64);
            }
        }
        if max_kernel > tol::MEAN_ZERO {
            return Err(Error::NonZeroMean {
                mean: max_kernel,
                tol: tol::MEAN_ZERO,
            });
        }
        let mut out = spec;
        for (idx, v) in out.indexed_iter_mut() {
            let (iy1, iy2, ix1, ix2) = idx;
            let mut k2 = 0.0f64;
            if matches!(axes, AxisSet::Fiber | AxisSet::All) {
                let k1 = dft_freq(ix1, nf) as f64;
                let k2f = dft_freq(ix2, nf) as f64;
                k2 += k1 * k1 + k2f * k2f;
            }
            if matches!(axes, AxisSet::Base | AxisSet::All) {
                let l1 = dft_freq(iy1, nb) as f64;
                let l2 = dft_freq(iy2, nb) as f64;
                k2 += l1 * l1 + l2 * l2;
            }
            if k2 == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v /= -std::f64::consts::PI * std::f64::consts::PI * k2;
            }
        }
        Ok(ScalarField::from_spectrum(self.grid, out))
    }

    /// Sum of squared Fourier magnitudes (for Parseval checks).
    pub fn spectral_energy(&self) -> f64 {
        let spec = self.fft();
        let n = self.grid.len() as f64;
        let parts: Vec<f64> = spec.iter().map(|v| v.norm_sqr() / (n * n)).collect();
        pairwise_sum_f64(&parts)
    }

    /// Largest per-axis frequency carrying energy above `threshold` relative
    /// to the largest coefficient.
    pub fn observed_band(&self, threshold: f64) -> (i64, i64) {
        let spec = self.fft();
        let peak = spec.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if peak == 0.0 {
            return (0, 0);
        }
        let (nb, _, nf, _) = self.grid.shape();
        let mut bf = 0i64;
        let mut bb = 0i64;
        for (idx, v) in spec.indexed_iter() {
            if v.norm() > threshold * peak {
                let (iy1, iy2, ix1, ix2) = idx;
                bf = bf
                    .max(dft_freq(ix1, nf).abs())
                    .max(dft_freq(ix2, nf).abs());
                bb = bb
                    .max(dft_freq(iy1, nb).abs())
                    .max(dft_freq(iy2, nb).abs());
            }
        }
        (bf, bb)
    }
}

/// Complex samples on the base torus only.
#[derive(Clone, Debug)]
pub struct BaseField {
    pub grid: Grid4,
    pub values: Array2<Complex64>,
}

impl BaseField {
    pub fn zeros(grid: Grid4) -> Self {
        BaseField {
            grid,
            values: Array2::zeros((grid.n_base, grid.n_base)),
        }
    }

    pub fn constant(grid: Grid4, value: f64) -> Self {
        BaseField {
            grid,
            values: Array2::from_elem((grid.n_base, grid.n_base), Complex64::new(value, 0.0)),
        }
    }

    pub fn from_fn(grid: Grid4, f: impl Fn(f64, f64) -> f64) -> Self {
        let nb = grid.n_base;
        let mut values = Array2::zeros((nb, nb));
        for iy1 in 0..nb {
            for iy2 in 0..nb {
                values[[iy1, iy2]] = Complex64::new(
                    f(iy1 as f64 / nb as f64, iy2 as f64 / nb as f64),
                    0.0,
                );
            }
        }
        BaseField { grid, values }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        BaseField {
            grid: self.grid,
            values: self.values.map(|v| f(*v)),
        }
    }

    pub fn zip_with(&self, other: &BaseField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a = f(*a, *b));
        BaseField {
            grid: self.grid,
            values,
        }
    }

    pub fn add(&self, other: &BaseField) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &BaseField) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &BaseField) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &BaseField) -> Self {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        self.map(|v| v + s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.im.abs()))
    }

    /// Mean over the base torus (unit area).
    pub fn integrate_complex(&self) -> Complex64 {
        let slice = self.values.as_slice().expect("contiguous base values");
        pairwise_sum(slice) / slice.len() as f64
    }

    pub fn integrate(&self) -> f64 {
        self.integrate_complex().re
    }

    /// Constant extension along fibers.
    pub fn lift(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        let nf = self.grid.n_fiber;
        for iy1 in 0..self.grid.n_base {
            for iy2 in 0..self.grid.n_base {
                let v = self.values[[iy1, iy2]];
                out.values
                    .slice_mut(ndarray::s![iy1, iy2, .., ..])
                    .fill(v);
                let _ = nf;
            }
        }
        out
    }

    fn fft(&self) -> Array2<Complex64> {
        let mut spec = self.values.clone();
        fft_axis2(&mut spec, 0, false);
        fft_axis2(&mut spec, 1, false);
        spec
    }

    fn from_spectrum(grid: Grid4, mut spec: Array2<Complex64>) -> Self {
        fft_axis2(&mut spec, 0, true);
        fft_axis2(&mut spec, 1, true);
        BaseField { grid, values: spec }
    }

    /// Spectral ∂_z or ∂_z̄ on the base torus.
    pub fn derivative(&self, dir: CDir) -> Self {
        assert!(matches!(dir, CDir::Z | CDir::ZBar), "base fields only have z-derivatives");
        let nb = self.grid.n_base;
        let mut spec = self.fft();
        for (idx, v) in spec.indexed_iter_mut() {
            let l1 = dft_freq(idx.0, nb) as f64;
            let l2 = dft_freq(idx.1, nb) as f64;
            let sym = match dir {
                CDir::Z => Complex64::new(std::f64::consts::PI * l2, std::f64::consts::PI * l1),
                CDir::ZBar => Complex64::new(-std::f64::consts::PI * l2, std::f64::consts::PI * l1),
                _ => unreachable!(),
            };
            *v *= sym;
        }
        BaseField::from_spectrum(self.grid, spec)
    }

    /// Solve ∂_z∂_z̄φ = ρ on the base torus for the mean-zero φ.
    pub fn laplace_solve(&self) -> Result<BaseField> {
        let nb = self.grid.n_base;
        let spec = self.fft();
        let mean = spec[[0, 0]].norm() / (nb * nb) as f64;
        if mean > tol::MEAN_ZERO {
            return Err(Error::NonZeroMean {
                mean,
                tol: tol::MEAN_ZERO,
            });
        }
        let mut out = spec;
        for (idx, v) in out.indexed_iter_mut() {
            let l1 = dft_freq(idx.0, nb) as f64;
            let l2 = dft_freq(idx.1, nb) as f64;
            let k2 = l1 * l1 + l2 * l2;
            if k2 == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v /= -std::f64::consts::PI * std::f64::consts::PI * k2;
            }
        }
        Ok(BaseField::from_spectrum(self.grid, out))
    }
}

/// Weighted mean `∫ f·w / ∫ w` with deterministic summation.
pub fn weighted_mean(f: &ScalarField, w: &ScalarField) -> f64 {
    let num = f.mul(w).integrate();
    let den = w.integrate();
    num / den
}

/// Weighted mean over the base torus.
pub fn weighted_mean_base(f: &BaseField, w: &BaseField) -> f64 {
    let num = f.mul(w).integrate();
    let den = w.integrate();
    num / den
}
