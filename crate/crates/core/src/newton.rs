//! Damped Newton completion: perturb an approximate solution ω to a genuine
//! solution of Λ_ωχ = c at fixed k.
//!
//! Each step solves the true linearization (the trace derivative, without
//! the gradient correction of F) on the mean-zero subspace by restarted
//! GMRES with the flat Fourier preconditioner; the operator is a small
//! perturbation of the self-adjoint F near solutions, which keeps the
//! preconditioned system well conditioned. Steps are damped: a candidate is
//! accepted only if positivity survives and the residual decreases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::forms::{ddbar, j_constant, mat_mul, trace, FormField};
use crate::jlinear::{flat_coeffs, flat_precondition, LinearProblem, SolverOptions};
use crate::tol;

/// J-equation residual Λ_ωχ − c with c the cohomological constant of the
/// pair; returns the residual field and its sup-norm. The field integrates
/// to ≈ 0 against the ω-volume by the definition of c (checked).
pub fn j_residual(omega: &FormField, chi: &FormField) -> Result<(ScalarField, f64)> {
    let c = j_constant(chi, omega)?;
    let lam = trace(omega, chi)?;
    let residual = lam.add_scalar(-c);
    let vol = omega.det();
    let mean = residual.mul(&vol).integrate() / vol.integrate();
    debug_assert!(
        mean.abs() < 1e-9,
        "residual mean {mean:.3e} violates the defining property of c"
    );
    let sup = residual.sup_norm();
    Ok((residual, sup))
}

/// Directional derivative of φ ↦ Λ_{ω + i∂∂̄φ}χ at 0: the pure contraction
/// −g^{mq̄}(∂∂̄φ)_{mn̄} g^{pn̄} χ_{pq̄}, without the gradient correction.
pub fn linearize(omega: &FormField, chi: &FormField, phi: &ScalarField) -> ScalarField {
    let m = omega.inverse_entries();
    let x = [chi.ww.clone(), chi.wz.clone(), chi.g_zw(), chi.zz.clone()];
    let dd = ddbar(phi);
    let h = [dd.ww.clone(), dd.wz.clone(), dd.g_zw(), dd.zz.clone()];
    let mh = mat_mul(&m, &h);
    let mhm = mat_mul(&mh, &m);
    let mhmx = mat_mul(&mhm, &x);
    mhmx[0].add(&mhmx[3]).scale(-1.0).into_real()
}

/// One damping trial inside a Newton iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub damping: f64,
    pub accepted: bool,
    pub residual_sup: f64,
    pub positivity_margin: f64,
}

/// Quantitative-IFT-style diagnostics measured at a metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IftDiagnostics {
    /// Quadratic-mean operator norm of the linearization's inverse on
    /// mean-zero functions.
    pub inverse_norm: f64,
    /// Smallest nonzero Rayleigh quotient of the self-adjoint F.
    pub smallest_rayleigh: f64,
    /// Sampled Lipschitz constant of the nonlinear part near the metric.
    pub lipschitz_sample: f64,
    /// Radius δ' on which the nonlinearity is (1/2‖P‖)-Lipschitz.
    pub delta_prime: f64,
    /// Solvability radius δ = δ'/(2‖P‖).
    pub delta: f64,
}

/// Full record of a Newton run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_sup_history: Vec<f64>,
    pub residual_l2_history: Vec<f64>,
    pub final_positivity_margin: f64,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Filled on demand by [`ift_diagnostics`].
    pub ift: Option<IftDiagnostics>,
    /// Ratios of successive sup residuals over the final iterations.
    pub tail_ratios: Vec<f64>,
}

/// Controls for the Newton loop.
#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub gmres: GmresOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            residual_tol: tol::NEWTON_RESIDUAL,
            max_iterations: 30,
            gmres: GmresOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iters: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            rel_tol: 1e-11,
            restart: 80,
            max_iters: 600,
        }
    }
}

/// Weighted quadratic-mean norm helper.
fn l2_weighted(f: &ScalarField, vol: &ScalarField) -> f64 {
    (f.mul(f).mul(vol).integrate() / vol.integrate()).sqrt()
}

/// Right-preconditioned restarted GMRES over real scalar fields in the
/// volume-weighted inner product.
fn gmres(
    apply: &dyn Fn(&ScalarField) -> ScalarField,
    precond: &dyn Fn(&ScalarField) -> ScalarField,
    b: &ScalarField,
    vol: &ScalarField,
    opts: GmresOptions,
) -> Result<ScalarField> {
    let inner = |u: &ScalarField, v: &ScalarField| u.mul(v).mul(vol).integrate();
    let norm = |u: &ScalarField| inner(u, u).sqrt();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(ScalarField::zeros(b.grid));
    }
    let target = opts.rel_tol * b_norm;

    let mut x = ScalarField::zeros(b.grid);
    let mut total_iters = 0usize;
    loop {
        let r = b.sub(&apply(&x));
        let beta = norm(&r);
        if beta <= target {
            return Ok(x);
        }
        // Arnoldi with modified Gram–Schmidt and Givens rotations
        let m = opts.restart;
        let mut basis: Vec<ScalarField> = vec![r.scale(1.0 / beta)];
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut converged_cols = 0usize;
        for j in 0..m {
            total_iters += 1;
            let mut w = apply(&precond(&basis[j]));
            let w_scale = norm(&w).max(1e-300);
            for (i, v) in basis.iter().enumerate() {
                h[i][j] = inner(&w, v);
                w = w.sub(&v.scale(h[i][j]));
            }
            h[j + 1][j] = norm(&w);
            // happy breakdown: the Krylov space is exhausted; normalizing
            // the (rounding-level) remainder would amplify FFT noise
            let breakdown = h[j + 1][j] <= 1e-12 * w_scale;
            if breakdown {
                h[j + 1][j] = 0.0;
                basis.push(ScalarField::zeros(b.grid));
            } else {
                basis.push(w.scale(1.0 / h[j + 1][j]));
            }
            // apply accumulated rotations to the new column
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            converged_cols = j + 1;
            if breakdown || g[j + 1].abs() <= target || total_iters >= opts.max_iters {
                break;
            }
        }
        // back substitution for the least-squares coefficients
        let n = converged_cols;
        let mut y = vec![0.0f64; n];
        for i in (0..n).rev() {
            let mut s = g[i];
            for l in (i + 1)..n {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        let mut update = ScalarField::zeros(b.grid);
        for (i, yi) in y.iter().enumerate() {
            update = update.add(&basis[i].scale(*yi));
        }
        x = x.add(&precond(&update));

        let achieved = norm(&b.sub(&apply(&x)));
        if achieved <= target {
            return Ok(x);
        }
        if total_iters >= opts.max_iters {
            return Err(Error::NoConvergence {
                iterations: total_iters,
                residual: achieved,
                target,
            });
        }
    }
}

/// Solve one Newton linear system: linearize(ω, χ, φ) = −ρ on the mean-zero
/// subspace. The inner tolerance follows the current residual level
/// (an inexact-Newton forcing term), which keeps the outer convergence
/// superlinear without pushing GMRES below its rounding floor.
fn newton_direction(
    omega: &FormField,
    chi: &FormField,
    rho: &ScalarField,
    sup_res: f64,
    gmres_opts: GmresOptions,
) -> Result<ScalarField> {
    let vol = omega.det();
    let vol_total = vol.integrate();
    let project = |f: &ScalarField| {
        let mean = f.mul(&vol).integrate() / vol_total;
        f.add_scalar(-mean)
    };
    let (cf, cb) = flat_coeffs(omega, chi);
    let apply = |phi: &ScalarField| project(&linearize(omega, chi, phi));
    let precond = |r: &ScalarField| project(&flat_precondition(r, cf, cb));
    let b = project(&rho.scale(-1.0));
    let opts = GmresOptions {
        rel_tol: (0.05 * sup_res).clamp(gmres_opts.rel_tol, 1e-4),
        ..gmres_opts
    };
    let phi = gmres(&apply, &precond, &b, &vol, opts)?;
    Ok(project(&phi))
}

/// Damped Newton iteration from `init`; returns the final metric and the
/// run record. Running out of iterations is reported through
/// `report.converged = false` (the report is the point); structural
/// failures (nonpositive start, a dead inner solve, damping exhausted)
/// surface as errors. The constant c is recomputed from the wedge integrals
/// at every iteration (it is class-constant; recomputation is a consistency
/// check, not a dependency).
pub fn newton_solve(
    init: &FormField,
    chi: &FormField,
    opts: NewtonOptions,
) -> Result<(FormField, SolveReport)> {
    let start = std::time::Instant::now();
    init.require_positive()?;
    let mut omega = init.clone();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut sup_history = Vec::new();
    let mut l2_history = Vec::new();

    let (mut residual, mut sup) = j_residual(&omega, chi)?;
    sup_history.push(sup);
    l2_history.push(l2_weighted(&residual, &omega.det()));

    let mut iterations = 0usize;
    while sup > opts.residual_tol {
        if iterations >= opts.max_iterations {
            let margin = omega.positivity_margin().0;
            let report = finish_report(
                iterations,
                sup_history,
                l2_history,
                steps,
                margin,
                false,
                start,
            );
            return Ok((omega, report));
        }
        iterations += 1;
        let phi = newton_direction(&omega, chi, &residual, sup, opts.gmres)?;

        // damping: accept the largest t in {1, 1/2, ...} that keeps the
        // metric positive and decreases the residual
        let mut t = 1.0f64;
        let mut accepted = false;
        while t >= 1.0 / 1024.0 {
            let candidate = omega.add(&ddbar(&phi.scale(t)));
            let (margin, _) = candidate.positivity_margin();
            if margin <= 0.0 {
                steps.push(StepRecord {
                    iteration: iterations,
                    damping: t,
                    accepted: false,
                    residual_sup: f64::NAN,
                    positivity_margin: margin,
                });
                t *= 0.5;
                continue;
            }
            let (cand_res, cand_sup) = j_residual(&candidate, chi)?;
            if cand_sup < sup {
                steps.push(StepRecord {
                    iteration: iterations,
                    damping: t,
                    accepted: true,
                    residual_sup: cand_sup,
                    positivity_margin: margin,
                });
                omega = candidate;
                residual = cand_res;
                sup = cand_sup;
                accepted = true;
                break;
            }
            steps.push(StepRecord {
                iteration: iterations,
                damping: t,
                accepted: false,
                residual_sup: cand_sup,
                positivity_margin: margin,
            });
            t *= 0.5;
        }
        if !accepted {
            let (margin, _) = omega.positivity_margin();
            return Err(Error::PositivityBreakdown {
                margin,
                damping: t * 2.0,
            });
        }
        sup_history.push(sup);
        l2_history.push(l2_weighted(&residual, &omega.det()));
    }

    let margin = omega.positivity_margin().0;
    let report = finish_report(
        iterations,
        sup_history,
        l2_history,
        steps,
        margin,
        true,
        start,
    );
    Ok((omega, report))
}

fn finish_report(
    iterations: usize,
    sup_history: Vec<f64>,
    l2_history: Vec<f64>,
    steps: Vec<StepRecord>,
    margin: f64,
    converged: bool,
    start: std::time::Instant,
) -> SolveReport {
    let tail_ratios = sup_history
        .windows(2)
        .rev()
        .take(3)
        .map(|w| w[1] / w[0])
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    SolveReport {
        iterations,
        residual_sup_history: sup_history,
        residual_l2_history: l2_history,
        final_positivity_margin: margin,
        steps,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        ift: None,
        tail_ratios,
    }
}

/// Unweighted transpose of the linearization: Lᵀψ = Σ ∂_b∂_c̄ (C_{bc} ψ)
/// where L φ = Σ C_{bc} ∂_b∂_c̄ φ with C = −(M X M)ᵀ.
fn linearize_transpose(omega: &FormField, chi: &FormField, psi: &ScalarField) -> ScalarField {
    use crate::field::CDir;
    let m = omega.inverse_entries();
    let x = [chi.ww.clone(), chi.wz.clone(), chi.g_zw(), chi.zz.clone()];
    let mx = mat_mul(&m, &x);
    let mxm = mat_mul(&mx, &m);
    // C_{bc} = −(MXM)_{cb}
    let c = [
        mxm[0].scale(-1.0),
        mxm[2].scale(-1.0),
        mxm[1].scale(-1.0),
        mxm[3].scale(-1.0),
    ];
    let dirs = [
        (CDir::W, CDir::WBar),
        (CDir::W, CDir::ZBar),
        (CDir::Z, CDir::WBar),
        (CDir::Z, CDir::ZBar),
    ];
    let mut out = ScalarField::zeros(psi.grid);
    for (cf, (db, dc)) in c.iter().zip(dirs) {
        out = out.add(&cf.mul(psi).derivative(db).derivative(dc));
    }
    out.map(|v| num_complex::Complex64::new(v.re, 0.0))
}

/// Estimate the quadratic-mean operator norm ‖P‖ of the linearization's
/// inverse on mean-zero functions by power iteration on L⁻¹(L*)⁻¹, plus the
/// smallest nonzero Rayleigh quotient of the self-adjoint F.
pub fn estimate_inverse_norm(
    omega: &FormField,
    chi: &FormField,
    gmres_opts: GmresOptions,
) -> Result<(f64, f64)> {
    let gmres_opts = GmresOptions {
        rel_tol: gmres_opts.rel_tol.max(1e-9),
        ..gmres_opts
    };
    let vol = omega.det();
    let vol_total = vol.integrate();
    let project = |f: &ScalarField| {
        let mean = f.mul(&vol).integrate() / vol_total;
        f.add_scalar(-mean)
    };
    let inner = |u: &ScalarField, v: &ScalarField| u.mul(v).mul(&vol).integrate() / vol_total;
    let (cf, cb) = flat_coeffs(omega, chi);
    let apply = |phi: &ScalarField| project(&linearize(omega, chi, phi));
    // adjoint w.r.t. the volume-weighted inner product
    let apply_adj = |psi: &ScalarField| {
        let weighted = psi.mul(&vol).scale(1.0 / vol_total);
        let t = linearize_transpose(omega, chi, &weighted);
        project(&t.map(|v| v * vol_total).div(&vol))
    };
    let precond = |r: &ScalarField| project(&flat_precondition(r, cf, cb));

    let grid = omega.grid;
    let mut v = project(&ScalarField::from_fn(grid, |p| {
        (2.0 * std::f64::consts::PI * p[0]).cos()
            + (2.0 * std::f64::consts::PI * p[2]).cos()
            + 0.3 * (2.0 * std::f64::consts::PI * (p[1] + p[3])).sin()
    }));
    let mut norm_sq = f64::NAN;
    for _ in 0..40 {
        let nv = inner(&v, &v).sqrt();
        v = v.scale(1.0 / nv);
        // u = L⁻¹ (L*)⁻¹ v
        let y = gmres(&apply_adj, &precond, &v, &vol, gmres_opts)?;
        let u = gmres(&apply, &precond, &project(&y), &vol, gmres_opts)?;
        let u = project(&u);
        let lambda = inner(&v, &u);
        let done = (lambda - norm_sq).abs() <= 1e-4 * lambda.abs();
        norm_sq = lambda;
        v = u;
        if done {
            break;
        }
    }
    if !norm_sq.is_finite() || norm_sq <= 0.0 {
        return Err(Error::NoConvergence {
            iterations: 40,
            residual: norm_sq,
            target: 0.0,
        });
    }
    let inverse_norm = norm_sq.sqrt();

    let problem = LinearProblem::new(omega.clone(), chi.clone())?;
    let lam_min =
        crate::jlinear::smallest_eigenvalue(&problem, SolverOptions::for_grid(grid))?;
    Ok((inverse_norm, lam_min))
}

/// Measure the IFT-style diagnostics at a near-solution: ‖P‖, the smallest
/// Rayleigh quotient of F, a sampled Lipschitz constant of the nonlinear
/// part, and the radii δ' and δ. Reported, not used as gates; damping is
/// the actual globalization.
pub fn ift_diagnostics(
    omega: &FormField,
    chi: &FormField,
    gmres_opts: GmresOptions,
) -> Result<IftDiagnostics> {
    let (inverse_norm, smallest_rayleigh) = estimate_inverse_norm(omega, chi, gmres_opts)?;

    // sampled Lipschitz estimate of φ ↦ DΛ(φ)·ψ − DΛ(0)·ψ over a few probe
    // directions and amplitudes
    let grid = omega.grid;
    let vol = omega.det();
    let probes = [
        ScalarField::from_fn(grid, |p| (2.0 * std::f64::consts::PI * p[2]).cos()),
        ScalarField::from_fn(grid, |p| {
            (2.0 * std::f64::consts::PI * (p[0] + p[3])).sin()
        }),
    ];
    let mut lipschitz: f64 = 0.0;
    for f in &probes {
        for psi in &probes {
            let amp = 1e-3;
            let shifted = omega.add(&ddbar(&f.scale(amp)));
            if shifted.positivity_margin().0 <= 0.0 {
                continue;
            }
            let d1 = linearize(&shifted, chi, psi);
            let d0 = linearize(omega, chi, psi);
            let num = l2_weighted(&d1.sub(&d0), &vol);
            let den = amp * l2_weighted(&f.scale(amp), &vol).max(1e-300) / amp
                * l2_weighted(psi, &vol);
            lipschitz = lipschitz.max(num / den);
        }
    }
    let delta_prime = if lipschitz > 0.0 {
        1.0 / (2.0 * inverse_norm * lipschitz)
    } else {
        f64::INFINITY
    };
    let delta = delta_prime / (2.0 * inverse_norm);
    Ok(IftDiagnostics {
        inverse_norm,
        smallest_rayleigh,
        lipschitz_sample: lipschitz,
        delta_prime,
        delta,
    })
}
