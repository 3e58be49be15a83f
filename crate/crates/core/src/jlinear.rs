//! The self-adjoint linearized operator
//!
//!   F_{ω,χ}(φ) = −(χ, i∂∂̄φ)_ω − (∂(Λ_ωχ), ∂̄φ)_ω
//!
//! with its elliptic solves on mean-zero subspaces, fiberwise families of
//! solves, and the fiberwise normalization of ω_X.
//!
//! The pairing conventions are fixed so that the integral identity
//! ∫ φ F(ψ) ωⁿ = ∫ ∇^q̄φ ∇^pψ χ_{pq̄} ωⁿ holds exactly in the
//! constant-coefficient case; with the coefficient matrices g, X and the
//! plain matrix inverse M = g⁻¹ the first term reads −tr(M·(∂∂̄φ)·M·X).
//! F is positive semidefinite with kernel the constants whenever χ > 0,
//! which justifies conjugate-gradient iteration on the mean-zero subspace.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{
    dft_freq, pairwise_sum, AxisSet, BaseField, CDir, Grid4, ScalarField,
};
use crate::fibration::{fiber_mean, BaseForm};
use crate::forms::{ddbar, mat_mul, trace, FormField};
use crate::tol;

/// Iterative-solver controls.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Sup-norm residual target.
    pub residual_tol: f64,
    pub max_iters: usize,
}

impl SolverOptions {
    pub fn for_grid(grid: Grid4) -> Self {
        SolverOptions {
            residual_tol: tol::SOLVER_RESIDUAL,
            max_iters: 10 * grid.n_fiber.max(grid.n_base),
        }
    }
}

/// Convergence record of one linear solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual_sup: f64,
}

/// The total-space problem data: positive ω and Kähler χ (ellipticity).
#[derive(Clone, Debug)]
pub struct LinearProblem {
    pub omega: FormField,
    pub chi: FormField,
}

impl LinearProblem {
    pub fn new(omega: FormField, chi: FormField) -> Result<Self> {
        omega.require_positive()?;
        chi.require_positive()?;
        Ok(LinearProblem { omega, chi })
    }

    /// Volume density of ω² (up to a constant factor that cancels in means).
    pub fn volume(&self) -> ScalarField {
        self.omega.det()
    }

    fn weighted_mean(&self, f: &ScalarField) -> f64 {
        let vol = self.volume();
        f.mul(&vol).integrate() / vol.integrate()
    }

    /// Project onto ω-volume mean-zero functions.
    pub fn project(&self, f: &ScalarField) -> ScalarField {
        f.add_scalar(-self.weighted_mean(f))
    }

    /// Weighted inner product ⟨u, v⟩ = ∫ u v ω² (real fields).
    pub fn inner(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        u.mul(v).mul(&self.volume()).integrate()
    }

    /// Apply F_{ω,χ}.
    ///
    /// The gradient pairing −(∂(Λ_ωχ), ∂̄φ)_ω is taken with the symmetrized
    /// (real-part) Hermitian convention: the raw pairing of a (1,0)- with a
    /// (0,1)-gradient carries a skew imaginary part (a divergence-free
    /// bracket of Λ_ωχ with φ) which would make F complex-valued on real
    /// functions. The real part keeps F real and symmetric, agrees with the
    /// raw pairing wherever Λ_ωχ is constant — which is the only place the
    /// solves are used — and makes the self-adjointness identity hold with
    /// the matching symmetrized right-hand side.
    pub fn apply_f(&self, phi: &ScalarField) -> ScalarField {
        let m = self.omega.inverse_entries();
        let x = [
            self.chi.ww.clone(),
            self.chi.wz.clone(),
            self.chi.g_zw(),
            self.chi.zz.clone(),
        ];
        let dd = ddbar(phi);
        let h = [dd.ww.clone(), dd.wz.clone(), dd.g_zw(), dd.zz.clone()];
        let mh = mat_mul(&m, &h);
        let mhm = mat_mul(&mh, &m);
        let mhmx = mat_mul(&mhm, &x);
        let first = mhmx[0].add(&mhmx[3]).scale(-1.0);

        // −Re Σ g^{pq̄} ∂_p(Λ_ωχ) ∂_q̄φ with g^{pq̄} = M_{qp}
        let lam = trace(&self.omega, &self.chi).expect("positive omega");
        let u_w = lam.derivative(CDir::W);
        let u_z = lam.derivative(CDir::Z);
        let v_w = phi.derivative(CDir::WBar);
        let v_z = phi.derivative(CDir::ZBar);
        let pairing = m[0]
            .mul(&u_w)
            .mul(&v_w)
            .add(&m[2].mul(&u_w).mul(&v_z))
            .add(&m[1].mul(&u_z).mul(&v_w))
            .add(&m[3].mul(&u_z).mul(&v_z))
            .map(|v| Complex64::new(v.re, 0.0));

        first.sub(&pairing).into_real()
    }

    /// Integrand of the self-adjointness identity,
    /// Re Σ χ_{pq̄} ∇^q̄φ ∇^pψ (to be integrated against ω²), with the same
    /// symmetrized pairing convention as [`Self::apply_f`].
    pub fn gradient_pairing(&self, phi: &ScalarField, psi: &ScalarField) -> ScalarField {
        let m = self.omega.inverse_entries();
        let dpw = phi.derivative(CDir::W);
        let dpz = phi.derivative(CDir::Z);
        let dqw = psi.derivative(CDir::WBar);
        let dqz = psi.derivative(CDir::ZBar);
        // u_q = (M ∂φ)_q, v_p = Σ_n M_{np} ∂_n̄ψ
        let u1 = m[0].mul(&dpw).add(&m[1].mul(&dpz));
        let u2 = m[2].mul(&dpw).add(&m[3].mul(&dpz));
        let v1 = m[0].mul(&dqw).add(&m[2].mul(&dqz));
        let v2 = m[1].mul(&dqw).add(&m[3].mul(&dqz));
        let x = [
            self.chi.ww.clone(),
            self.chi.wz.clone(),
            self.chi.g_zw(),
            self.chi.zz.clone(),
        ];
        x[0].mul(&v1)
            .mul(&u1)
            .add(&x[1].mul(&v1).mul(&u2))
            .add(&x[2].mul(&v2).mul(&u1))
            .add(&x[3].mul(&v2).mul(&u2))
            .map(|v| Complex64::new(v.re, 0.0))
    }

    /// Flat constant-coefficient Fourier preconditioner: the exact inverse of
    /// F for the problem with all coefficients replaced by their ω-volume
    /// means. Symbol π²(c_f |k_fiber|² + c_b |k_base|²).
    fn preconditioner_coeffs(&self) -> (f64, f64) {
        flat_coeffs(&self.omega, &self.chi)
    }

    fn precondition(&self, r: &ScalarField, cf: f64, cb: f64) -> ScalarField {
        flat_precondition(r, cf, cb)
    }

    /// Solve F(φ) = ρ for the mean-zero φ by preconditioned CG on the
    /// mean-zero subspace (flexible Polak–Ribière update, which tolerates the
    /// preconditioner being exact only for the flat problem).
    pub fn solve_f(&self, rho: &ScalarField, opts: SolverOptions) -> Result<(ScalarField, SolveStats)> {
        let mean = self.weighted_mean(rho).abs();
        if mean > tol::WEIGHTED_MEAN_ZERO {
            return Err(Error::NonZeroMean {
                mean,
                tol: tol::WEIGHTED_MEAN_ZERO,
            });
        }
        let (cf, cb) = self.preconditioner_coeffs();
        let mut x = ScalarField::zeros(rho.grid);
        let mut r = self.project(rho);
        if r.sup_norm() <= opts.residual_tol {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    residual_sup: r.sup_norm(),
                },
            ));
        }
        let mut z = self.project(&self.precondition(&r, cf, cb));
        let mut p = z.clone();
        let mut rz = self.inner(&r, &z);
        for iter in 1..=opts.max_iters {
            let ap = self.project(&self.apply_f(&p));
            let pap = self.inner(&p, &ap);
            let alpha = rz / pap;
            x = x.add(&p.scale(alpha));
            let r_new = self.project(&r.sub(&ap.scale(alpha)));
            let sup = r_new.sup_norm();
            if sup <= opts.residual_tol {
                return Ok((
                    self.project(&x),
                    SolveStats {
                        iterations: iter,
                        residual_sup: sup,
                    },
                ));
            }
            let z_new = self.project(&self.precondition(&r_new, cf, cb));
            // flexible (Polak–Ribière) beta
            let rz_new = self.inner(&r_new, &z_new);
            let beta = (rz_new - self.inner(&r, &z_new)) / rz;
            p = z_new.add(&p.scale(beta));
            r = r_new;
            z = z_new;
            let _ = &z;
            rz = rz_new;
        }
        let sup = self.project(&rho.sub(&self.apply_f(&x))).sup_norm();
        Err(Error::NoConvergence {
            iterations: opts.max_iters,
            residual: sup,
            target: opts.residual_tol,
        })
    }
}

/// Constant-coefficient approximation (c_f, c_b) of the operator pair,
/// from the ω-volume means of the diagonal coefficients.
pub(crate) fn flat_coeffs(omega: &FormField, chi: &FormField) -> (f64, f64) {
    let vol = omega.det();
    let wm = |f: &ScalarField| f.mul(&vol).integrate() / vol.integrate();
    let g_ww = wm(&omega.ww);
    let g_zz = wm(&omega.zz);
    let x_ww = wm(&chi.ww);
    let x_zz = wm(&chi.zz);
    (x_ww / (g_ww * g_ww), x_zz / (g_zz * g_zz))
}

/// Apply the inverse of the flat constant-coefficient operator with Fourier
/// symbol π²(c_f |k_fiber|² + c_b |k_base|²); the zero mode maps to zero.
pub(crate) fn flat_precondition(r: &ScalarField, cf: f64, cb: f64) -> ScalarField {
    let grid = r.grid;
    let mut spec = r.fft();
    let (nb, _, nf, _) = grid.shape();
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    for (idx, v) in spec.indexed_iter_mut() {
        let (iy1, iy2, ix1, ix2) = idx;
        let kf = {
            let a = dft_freq(ix1, nf) as f64;
            let b = dft_freq(ix2, nf) as f64;
            a * a + b * b
        };
        let kb = {
            let a = dft_freq(iy1, nb) as f64;
            let b = dft_freq(iy2, nb) as f64;
            a * a + b * b
        };
        let sym = pi2 * (cf * kf + cb * kb);
        if sym == 0.0 {
            *v = Complex64::new(0.0, 0.0);
        } else {
            *v /= sym;
        }
    }
    ScalarField::from_spectrum(grid, spec)
}

/// The base-torus problem: positive ω_B and Kähler χ_B (both single real
/// coefficients h and x), with F(φ) = −(x/h²)∂_z∂_z̄φ − h⁻¹∂_z(x/h)∂_z̄φ.
#[derive(Clone, Debug)]
pub struct BaseProblem {
    pub omega: BaseForm,
    pub chi: BaseForm,
}

impl BaseProblem {
    pub fn new(omega: BaseForm, chi: BaseForm) -> Result<Self> {
        for (name, form) in [("omega_B", &omega), ("chi_B", &chi)] {
            let m = form.positivity_margin();
            if m <= tol::POSITIVITY {
                return Err(Error::Config(format!(
                    "{name} must be positive on the base; min coefficient {m:.3e}"
                )));
            }
        }
        Ok(BaseProblem { omega, chi })
    }

    fn weighted_mean(&self, f: &BaseField) -> f64 {
        let w = &self.omega.coeff;
        f.mul(w).integrate() / w.integrate()
    }

    pub fn project(&self, f: &BaseField) -> BaseField {
        f.add_scalar(-self.weighted_mean(f))
    }

    pub fn inner(&self, u: &BaseField, v: &BaseField) -> f64 {
        u.mul(v).mul(&self.omega.coeff).integrate()
    }

    pub fn apply_f(&self, phi: &BaseField) -> BaseField {
        let h = &self.omega.coeff;
        let x = &self.chi.coeff;
        let ratio = x.div(h);
        let lap = phi.derivative(CDir::Z).derivative(CDir::ZBar);
        let first = ratio.div(h).mul(&lap).scale(-1.0);
        let grad = ratio
            .derivative(CDir::Z)
            .mul(&phi.derivative(CDir::ZBar))
            .div(h)
            .scale(-1.0);
        first.add(&grad).map(|v| Complex64::new(v.re, 0.0))
    }

    fn precondition(&self, r: &BaseField, c: f64) -> BaseField {
        let nb = r.grid.n_base;
        let mut spec = r.values.clone();
        fft2(&mut spec, false);
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        for (idx, v) in spec.indexed_iter_mut() {
            let a = dft_freq(idx.0, nb) as f64;
            let b = dft_freq(idx.1, nb) as f64;
            let sym = pi2 * c * (a * a + b * b);
            if sym == 0.0 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v /= sym;
            }
        }
        fft2(&mut spec, true);
        BaseField {
            grid: r.grid,
            values: spec,
        }
    }

    pub fn solve_f(&self, rho: &BaseField, opts: SolverOptions) -> Result<(BaseField, SolveStats)> {
        let mean = self.weighted_mean(rho).abs();
        if mean > tol::WEIGHTED_MEAN_ZERO {
            return Err(Error::NonZeroMean {
                mean,
                tol: tol::WEIGHTED_MEAN_ZERO,
            });
        }
        let h_mean = self.omega.coeff.integrate();
        let x_mean = self.chi.coeff.integrate();
        let c = x_mean / (h_mean * h_mean);
        let mut x = BaseField::zeros(rho.grid);
        let mut r = self.project(rho);
        if r.sup_norm() <= opts.residual_tol {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    residual_sup: r.sup_norm(),
                },
            ));
        }
        let mut z = self.project(&self.precondition(&r, c));
        let mut p = z.clone();
        let mut rz = self.inner(&r, &z);
        for iter in 1..=opts.max_iters {
            let ap = self.project(&self.apply_f(&p));
            let alpha = rz / self.inner(&p, &ap);
            x = x.add(&p.scale(alpha));
            let r_new = self.project(&r.sub(&ap.scale(alpha)));
            let sup = r_new.sup_norm();
            if sup <= opts.residual_tol {
                return Ok((
                    self.project(&x),
                    SolveStats {
                        iterations: iter,
                        residual_sup: sup,
                    },
                ));
            }
            let z_new = self.project(&self.precondition(&r_new, c));
            let rz_new = self.inner(&r_new, &z_new);
            let beta = (rz_new - self.inner(&r, &z_new)) / rz;
            p = z_new.add(&p.scale(beta));
            r = r_new;
            z = z_new;
            let _ = &z;
            rz = rz_new;
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iters,
            residual: r.sup_norm(),
            target: opts.residual_tol,
        })
    }
}

fn fft2(values: &mut ndarray::Array2<Complex64>, inverse: bool) {
    use ndarray::Axis;
    for axis in 0..2 {
        let n = values.shape()[axis];
        let fft = crate::field::fft_plan(n, inverse);
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
}

/// One fiber of a total-space problem: the restricted metric and reference
/// coefficients plus the fiber grid size.
struct FiberProblem<'a> {
    n: usize,
    g: &'a [Complex64],
    x: &'a [Complex64],
}

impl FiberProblem<'_> {
    fn weighted_mean(&self, f: &[Complex64]) -> f64 {
        let prod: Vec<Complex64> = f.iter().zip(self.g).map(|(a, b)| a * b).collect();
        let num = pairwise_sum(&prod);
        let den = pairwise_sum(self.g);
        (num / den).re
    }

    fn project(&self, f: &mut [Complex64]) {
        let m = self.weighted_mean(f);
        for v in f.iter_mut() {
            *v -= m;
        }
    }

    fn inner(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        let prod: Vec<Complex64> = u
            .iter()
            .zip(v)
            .zip(self.g)
            .map(|((a, b), w)| a * b * w)
            .collect();
        (pairwise_sum(&prod) / prod.len() as f64).re
    }

    fn fft(&self, f: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = self.n;
        let mut arr: Vec<Complex64> = f.to_vec();
        let fft = crate::field::fft_plan(n, inverse);
        let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
        // rows (x₁ lanes)
        for row in arr.chunks_mut(n) {
            fft.process(row);
            if inverse {
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
        }
        // columns (x₂ lanes)
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = arr[i * n + j];
            }
            fft.process(&mut col);
            for i in 0..n {
                arr[i * n + j] = if inverse { col[i] * scale } else { col[i] };
            }
        }
        arr
    }

    /// −(x/g²) ∂_w∂_w̄φ − g⁻¹ ∂_w(x/g) ∂_w̄φ on the fiber torus.
    fn apply_f(&self, phi: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let pi = std::f64::consts::PI;
        let mut spec = self.fft(phi, false);
        let mut spec_dwbar = spec.clone();
        for i in 0..n {
            for j in 0..n {
                let k1 = dft_freq(i, n) as f64;
                let k2 = dft_freq(j, n) as f64;
                let lap = -pi * pi * (k1 * k1 + k2 * k2);
                let dwbar = Complex64::new(-pi * k2, pi * k1);
                spec[i * n + j] *= lap;
                spec_dwbar[i * n + j] *= dwbar;
            }
        }
        let lap = self.fft(&spec, true);
        let dwbar_phi = self.fft(&spec_dwbar, true);

        // ratio = x/g and its ∂_w
        let ratio: Vec<Complex64> = self.x.iter().zip(self.g).map(|(x, g)| x / g).collect();
        let mut ratio_spec = self.fft(&ratio, false);
        for i in 0..n {
            for j in 0..n {
                let k1 = dft_freq(i, n) as f64;
                let k2 = dft_freq(j, n) as f64;
                ratio_spec[i * n + j] *= Complex64::new(pi * k2, pi * k1);
            }
        }
        let dratio = self.fft(&ratio_spec, true);

        (0..n * n)
            .map(|idx| {
                let g = self.g[idx];
                // symmetrized gradient pairing, as in LinearProblem::apply_f
                let grad = (dratio[idx] * dwbar_phi[idx]).re;
                -ratio[idx] / g * lap[idx] - grad / g
            })
            .collect()
    }

    fn precondition(&self, r: &[Complex64], c: f64) -> Vec<Complex64> {
        let n = self.n;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut spec = self.fft(r, false);
        for i in 0..n {
            for j in 0..n {
                let k1 = dft_freq(i, n) as f64;
                let k2 = dft_freq(j, n) as f64;
                let sym = pi2 * c * (k1 * k1 + k2 * k2);
                spec[i * n + j] = if sym == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    spec[i * n + j] / sym
                };
            }
        }
        self.fft(&spec, true)
    }

    fn solve(&self, rho: &[Complex64], opts: SolverOptions) -> Result<Vec<Complex64>> {
        let sup = |v: &[Complex64]| v.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        let g_mean = (pairwise_sum(self.g) / self.g.len() as f64).re;
        let x_mean = (pairwise_sum(self.x) / self.x.len() as f64).re;
        let c = x_mean / (g_mean * g_mean);

        let mut x = vec![Complex64::new(0.0, 0.0); rho.len()];
        let mut r = rho.to_vec();
        self.project(&mut r);
        if sup(&r) <= opts.residual_tol {
            return Ok(x);
        }
        let mut z = self.precondition(&r, c);
        self.project(&mut z);
        let mut p = z.clone();
        let mut rz = self.inner(&r, &z);
        for _ in 1..=opts.max_iters {
            let mut ap = self.apply_f(&p);
            self.project(&mut ap);
            let alpha = rz / self.inner(&p, &ap);
            for (xi, pi) in x.iter_mut().zip(&p) {
                *xi += alpha * pi;
            }
            let mut r_new: Vec<Complex64> =
                r.iter().zip(&ap).map(|(a, b)| a - alpha * b).collect();
            self.project(&mut r_new);
            if sup(&r_new) <= opts.residual_tol {
                self.project(&mut x);
                return Ok(x);
            }
            let mut z_new = self.precondition(&r_new, c);
            self.project(&mut z_new);
            let rz_new = self.inner(&r_new, &z_new);
            let beta = (rz_new - self.inner(&r, &z_new)) / rz;
            for (pi, zi) in p.iter_mut().zip(&z_new) {
                *pi = zi + beta * *pi;
            }
            r = r_new;
            rz = rz_new;
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iters,
            residual: sup(&r),
            target: opts.residual_tol,
        })
    }
}

/// Per base point, solve F_{ω_b, χ_b}(φ_b) = ρ_V|_b; the assembled result is
/// fiberwise mean-zero w.r.t. the fiber volume. Fibers solve independently
/// and in parallel.
pub fn fiberwise_solve_f(
    omega_x: &FormField,
    chi: &FormField,
    rho_v: &ScalarField,
    opts: SolverOptions,
) -> Result<ScalarField> {
    omega_x.require_relatively_kahler()?;
    let grid = rho_v.grid;
    // precondition: ρ_V fiberwise (weighted) mean-zero
    let means = fiber_mean(&rho_v.mul(&omega_x.ww));
    let vols = fiber_mean(&omega_x.ww);
    let max_mean = means
        .div(&vols)
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.norm()));
    if max_mean > tol::WEIGHTED_MEAN_ZERO {
        return Err(Error::NonZeroFiberMean {
            max_mean,
            tol: tol::WEIGHTED_MEAN_ZERO,
        });
    }

    let nf = grid.n_fiber;
    let fiber_len = nf * nf;
    let g_all = omega_x.ww.values.as_slice().expect("contiguous");
    let x_all = chi.ww.values.as_slice().expect("contiguous");
    let rho_all = rho_v.values.as_slice().expect("contiguous");

    let mut out = ScalarField::zeros(grid);
    let out_slice = out.values.as_slice_mut().expect("contiguous");
    let results: Result<Vec<()>> = out_slice
        .par_chunks_mut(fiber_len)
        .enumerate()
        .map(|(b, chunk)| {
            let lo = b * fiber_len;
            let hi = lo + fiber_len;
            let problem = FiberProblem {
                n: nf,
                g: &g_all[lo..hi],
                x: &x_all[lo..hi],
            };
            let phi = problem.solve(&rho_all[lo..hi], opts)?;
            chunk.copy_from_slice(&phi);
            Ok(())
        })
        .collect();
    results?;
    Ok(out)
}

/// Replace ω_X by ω_X + i∂∂̄v so that every fiber solves its J-equation:
/// at relative dimension one the fiber equation is linear and the solution is
/// g_{ww̄} = χ_{ww̄}/c_b pointwise, with v fiberwise mean-zero.
pub fn fiberwise_normalize(omega_x: &FormField, chi: &FormField) -> Result<FormField> {
    omega_x.require_relatively_kahler()?;
    // need χ_{ww̄} > 0 for the target metric to be relatively Kähler
    let (min_chi, index) = {
        let mut min = f64::INFINITY;
        let mut at = [0usize; 4];
        for (idx, v) in chi.ww.values.indexed_iter() {
            if v.re < min {
                min = v.re;
                at = [idx.0, idx.1, idx.2, idx.3];
            }
        }
        (min, at)
    };
    if min_chi <= tol::POSITIVITY {
        return Err(Error::NotPositive {
            min_eig: min_chi,
            index,
        });
    }
    let cb = fiber_mean(&chi.ww).div(&fiber_mean(&omega_x.ww));
    let target = chi.ww.div(&cb.lift());
    let rhs = target.sub(&omega_x.ww);
    let v = rhs.laplace_solve(AxisSet::Fiber)?.into_real();
    Ok(omega_x.add(&ddbar(&v)))
}

/// Smallest nonzero Rayleigh quotient of F by inverse power iteration
/// (deterministic start vector).
pub fn smallest_eigenvalue(problem: &LinearProblem, opts: SolverOptions) -> Result<f64> {
    let grid = problem.omega.grid;
    let seed = ScalarField::from_fn(grid, |p| {
        (2.0 * std::f64::consts::PI * p[2]).cos()
            + (2.0 * std::f64::consts::PI * p[0]).cos()
            + 0.5 * (2.0 * std::f64::consts::PI * (p[1] + p[3])).sin()
    });
    let mut v = problem.project(&seed);
    let mut lambda = f64::INFINITY;
    for _ in 0..60 {
        let norm = problem.inner(&v, &v).sqrt();
        v = v.scale(1.0 / norm);
        let (y, _) = problem.solve_f(&v, opts)?;
        // Rayleigh quotient of F at the current iterate
        let fv = problem.apply_f(&v);
        let new_lambda = problem.inner(&v, &fv) / problem.inner(&v, &v);
        let done = (new_lambda - lambda).abs() <= 1e-8 * new_lambda.abs();
        lambda = new_lambda;
        v = problem.project(&y);
        if done {
            break;
        }
    }
    Ok(lambda)
}
