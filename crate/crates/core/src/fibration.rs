//! Vertical–horizontal splitting induced by ω_X, fiber integration, and the
//! pushforward to the base.
//!
//! The horizontal distribution is the ω_X-orthogonal complement of the
//! fibers: with λ = g_{zw̄}/g_{ww̄}, the horizontal frame vector is
//! e_H = ∂_z − λ∂_w, and ω_X(e_H, ∂_w̄) = 0 pointwise. Every (1,1)-form
//! decomposes into frame components (purely vertical, mixed, purely
//! horizontal) against this frame.

use ndarray::s;
use num_complex::Complex64;

use crate::error::Result;
use crate::field::{pairwise_sum, BaseField, Grid4, ScalarField};
use crate::forms::FormField;

/// The splitting datum: the frame coefficient λ = g_{zw̄}/g_{ww̄} of the ω_X
/// it was derived from.
#[derive(Clone, Debug)]
pub struct Splitting {
    pub lambda: ScalarField,
}

impl Splitting {
    /// Derive the splitting from a relatively Kähler ω_X.
    pub fn of(omega_x: &FormField) -> Result<Splitting> {
        omega_x.require_relatively_kahler()?;
        Ok(Splitting {
            lambda: omega_x.g_zw().div(&omega_x.ww),
        })
    }

    /// Frame components of χ against (∂_w, e_H):
    /// χ_V = χ_{ww̄},
    /// χ_m = χ(∂_w, ē_H) = χ_{wz̄} − λ̄ χ_{ww̄},
    /// χ_H = χ(e_H, ē_H) = χ_{zz̄} − λχ_{wz̄} − λ̄χ_{zw̄} + |λ|²χ_{ww̄}.
    pub fn split(&self, chi: &FormField) -> SplitForm {
        let lam = &self.lambda;
        let lam_bar = lam.conj();
        let chi_v = chi.ww.clone().into_real();
        let chi_m = chi.wz.sub(&lam_bar.mul(&chi.ww));
        let chi_h = chi
            .zz
            .sub(&lam.mul(&chi.wz))
            .sub(&lam_bar.mul(&chi.g_zw()))
            .add(&lam.mul(&lam_bar).mul(&chi.ww))
            .into_real();
        SplitForm {
            chi_v,
            chi_m,
            chi_h,
        }
    }

    /// Inverse frame change; `reassemble(split(χ)) = χ`.
    pub fn reassemble(&self, parts: &SplitForm) -> FormField {
        let lam = &self.lambda;
        let lam_bar = lam.conj();
        let ww = parts.chi_v.clone();
        let wz = parts.chi_m.add(&lam_bar.mul(&parts.chi_v));
        let lam_m = lam.mul(&parts.chi_m);
        let zz = parts
            .chi_h
            .add(&lam_m)
            .add(&lam_m.conj())
            .add(&lam.mul(&lam_bar).mul(&parts.chi_v));
        FormField {
            grid: ww.grid,
            ww,
            wz,
            zz: zz.into_real(),
            closed_by_construction: false,
        }
    }
}

/// Frame components of a (1,1)-form against (∂_w, e_H).
#[derive(Clone, Debug)]
pub struct SplitForm {
    pub chi_v: ScalarField,
    pub chi_m: ScalarField,
    pub chi_h: ScalarField,
}

/// A (1,1)-form on the base torus: single real coefficient h with
/// ω_B = i h dz∧dz̄.
#[derive(Clone, Debug)]
pub struct BaseForm {
    pub coeff: BaseField,
}

impl BaseForm {
    pub fn constant(grid: Grid4, h: f64) -> Self {
        BaseForm {
            coeff: BaseField::constant(grid, h),
        }
    }

    /// Minimum of the (real) coefficient over the base grid.
    pub fn positivity_margin(&self) -> f64 {
        self.coeff
            .values
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.re))
    }

    /// Pullback to the total space as a FormField (zz-coefficient only).
    pub fn pullback(&self, grid: Grid4) -> FormField {
        FormField {
            grid,
            ww: ScalarField::zeros(grid),
            wz: ScalarField::zeros(grid),
            zz: self.coeff.lift(),
            closed_by_construction: true,
        }
    }
}

/// Per-fiber quadrature of `f` (unweighted mean over the fiber grid).
pub fn fiber_mean(f: &ScalarField) -> BaseField {
    let grid = f.grid;
    let nb = grid.n_base;
    let fiber_len = grid.n_fiber * grid.n_fiber;
    let mut out = BaseField::zeros(grid);
    for iy1 in 0..nb {
        for iy2 in 0..nb {
            let slab = f.values.slice(s![iy1, iy2, .., ..]);
            let slice = slab.to_slice().expect("contiguous fiber slab");
            out.values[[iy1, iy2]] = pairwise_sum(slice) / fiber_len as f64;
        }
    }
    out
}

/// Fiber volume V_b = ∫_fiber g_{ww̄} per base point. Independent of b for
/// closed ω_X.
pub fn fiber_volume(omega_x: &FormField) -> BaseField {
    fiber_mean(&omega_x.ww)
}

/// π_B on functions: per base point, the ω_b-weighted fiber average
/// V_b⁻¹ ∫_fiber f g_{ww̄}.
pub fn fiber_pushforward(f: &ScalarField, omega_x: &FormField) -> BaseField {
    let weighted = fiber_mean(&f.mul(&omega_x.ww));
    let volume = fiber_volume(omega_x);
    weighted.div(&volume)
}

/// Decompose f = f_B + f_V with f_B = π_B(f) and π_B(f_V) = 0.
pub fn vertical_decompose(f: &ScalarField, omega_x: &FormField) -> (BaseField, ScalarField) {
    let f_b = fiber_pushforward(f, omega_x);
    let f_v = f.sub(&f_b.lift());
    (f_b, f_v)
}

/// π_B(χ_H): the fiberwise average of the horizontal frame coefficient,
/// weighted by the fiber volume form.
pub fn push_chi_h(chi: &FormField, omega_x: &FormField) -> Result<BaseForm> {
    let splitting = Splitting::of(omega_x)?;
    let parts = splitting.split(chi);
    Ok(BaseForm {
        coeff: fiber_pushforward(&parts.chi_h, omega_x),
    })
}

/// Per-fiber J-constant c_b = ∫_fiber χ_{ww̄} / ∫_fiber g_{ww̄}; returns the
/// base average and the max deviation across base points. The deviation is
/// reported, not enforced: closed inputs give ≈ 0, hand-assembled
/// coefficient fields need not.
pub fn fiber_constant_cb(chi: &FormField, omega_x: &FormField) -> (f64, f64) {
    let num = fiber_mean(&chi.ww);
    let den = fiber_mean(&omega_x.ww);
    let cb = num.div(&den);
    let mean = cb.integrate();
    let dev = cb
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max((v - Complex64::new(mean, 0.0)).norm()));
    (mean, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{ddbar, FormField, HermitianConst};
    use std::f64::consts::PI;

    fn grid() -> Grid4 {
        Grid4::new(16, 16).unwrap()
    }

    fn product_metric(a: f64, b: f64) -> FormField {
        FormField::constant(grid(), HermitianConst::diag(a, b))
    }

    #[test]
    fn split_product_metric() {
        let omega = product_metric(1.0, 1.0);
        let chi = product_metric(2.0, 3.0);
        let splitting = Splitting::of(&omega).unwrap();
        assert_eq!(splitting.lambda.sup_norm(), 0.0);
        let parts = splitting.split(&chi);
        assert!(parts.chi_v.sub(&ScalarField::constant(grid(), 2.0)).sup_norm() < 1e-14);
        assert!(parts.chi_m.sup_norm() < 1e-14);
        assert!(parts.chi_h.sub(&ScalarField::constant(grid(), 3.0)).sup_norm() < 1e-14);
    }

    #[test]
    fn split_of_omega_itself_has_no_mixed_part() {
        // mixed-term relatively Kähler ω_X; ℋ is its own orthogonal complement
        let g = grid();
        let mut omega = product_metric(1.0, 1.0);
        omega.wz = ScalarField::constant(g, 0.0).map(|_| Complex64::new(0.1, 0.05));
        let omega = omega.add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.02 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })));
        let splitting = Splitting::of(&omega).unwrap();
        let parts = splitting.split(&omega);
        assert!(parts.chi_m.sup_norm() < 1e-12);
        // invariant: g_{zw̄} − λ g_{ww̄} = 0
        let defect = omega
            .g_zw()
            .sub(&splitting.lambda.mul(&omega.ww))
            .sup_norm();
        assert!(defect < 1e-12);
    }

    #[test]
    fn split_matches_pointwise_congruence_oracle() {
        // brute-force sesquilinear evaluation h(u, v) = Σ χ_{pq̄} u^p conj(v^q)
        // on the frame vectors at scattered points
        let g = grid();
        let mut omega = product_metric(1.0, 1.0);
        omega.wz = ScalarField::constant(g, 0.1);
        let chi = product_metric(1.0, 1.0);
        let splitting = Splitting::of(&omega).unwrap();
        let parts = splitting.split(&chi);

        let mut checked = 0;
        for iy1 in (0..16).step_by(3) {
            for iy2 in (0..16).step_by(5) {
                for ix1 in (0..16).step_by(4) {
                    for ix2 in (0..16).step_by(7) {
                        let idx = [iy1, iy2, ix1, ix2];
                        let x = [
                            chi.ww.values[idx],
                            chi.wz.values[idx],
                            chi.wz.values[idx].conj(),
                            chi.zz.values[idx],
                        ];
                        let lam = splitting.lambda.values[idx];
                        let pair = |u: [Complex64; 2], v: [Complex64; 2]| {
                            x[0] * u[0] * v[0].conj()
                                + x[1] * u[0] * v[1].conj()
                                + x[2] * u[1] * v[0].conj()
                                + x[3] * u[1] * v[1].conj()
                        };
                        let one = Complex64::new(1.0, 0.0);
                        let zero = Complex64::new(0.0, 0.0);
                        let e_w = [one, zero];
                        let e_h = [-lam, one];
                        assert!((pair(e_w, e_w) - parts.chi_v.values[idx]).norm() < 1e-13);
                        assert!((pair(e_w, e_h) - parts.chi_m.values[idx]).norm() < 1e-13);
                        assert!((pair(e_h, e_h) - parts.chi_h.values[idx]).norm() < 1e-13);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 100, "covered {checked} points");
    }

    #[test]
    fn split_reassemble_round_trip() {
        let g = grid();
        let mut omega = product_metric(1.0, 1.2);
        omega.wz = ScalarField::from_fn(g, |p| 0.05 * (2.0 * PI * p[0]).cos());
        let chi = product_metric(2.0, 3.0).add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.04 * (2.0 * PI * (p[2] + p[1])).cos() + 0.02 * (2.0 * PI * p[3]).sin()
        })));
        let splitting = Splitting::of(&omega).unwrap();
        let back = splitting.reassemble(&splitting.split(&chi));
        assert!(back.sup_distance(&chi) < 1e-12);
    }

    #[test]
    fn pushforward_examples() {
        let g = grid();
        let omega = product_metric(1.0, 1.0);
        // f = 1 → 1
        let one = ScalarField::constant(g, 1.0);
        let p = fiber_pushforward(&one, &omega);
        assert!(p.sub(&BaseField::constant(g, 1.0)).sup_norm() < 1e-14);
        // fiberwise mean-zero mode → 0
        let f = ScalarField::from_fn(g, |p| (2.0 * PI * p[2]).cos());
        assert!(fiber_pushforward(&f, &omega).sup_norm() < 1e-14);
    }

    #[test]
    fn pushforward_weighted_matches_doubled_resolution_quadrature() {
        // fiber-dependent weight g_{ww̄} = 1 + 0.2cos(2πx₁); compare with an
        // independent plain quadrature at doubled fiber resolution
        let f_fn = |p: [f64; 4]| (2.0 * PI * p[2]).cos() * (1.0 + 0.3 * (2.0 * PI * p[0]).cos());
        let w_fn = |p: [f64; 4]| 1.0 + 0.2 * (2.0 * PI * p[2]).cos();

        let g = grid();
        let omega = {
            let mut o = product_metric(1.0, 1.0);
            o.ww = ScalarField::from_fn(g, w_fn);
            o
        };
        let f = ScalarField::from_fn(g, f_fn);
        let pushed = fiber_pushforward(&f, &omega);

        let n2 = 32usize;
        for (iy1, iy2) in [(0usize, 0usize), (3, 9), (11, 5)] {
            let y1 = iy1 as f64 / 16.0;
            let y2 = iy2 as f64 / 16.0;
            let mut num = 0.0;
            let mut den = 0.0;
            for ix1 in 0..n2 {
                for ix2 in 0..n2 {
                    let p = [y1, y2, ix1 as f64 / n2 as f64, ix2 as f64 / n2 as f64];
                    num += f_fn(p) * w_fn(p);
                    den += w_fn(p);
                }
            }
            let oracle = num / den;
            let got = pushed.values[[iy1, iy2]].re;
            assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
        }
    }

    #[test]
    fn vertical_decompose_examples() {
        let g = grid();
        let omega = product_metric(1.0, 1.0);

        let c = ScalarField::constant(g, 4.0);
        let (b, v) = vertical_decompose(&c, &omega);
        assert!(b.sub(&BaseField::constant(g, 4.0)).sup_norm() < 1e-13);
        assert!(v.sup_norm() < 1e-13);

        let pull = ScalarField::from_fn(g, |p| (2.0 * PI * p[0]).cos());
        let (b, v) = vertical_decompose(&pull, &omega);
        let expected = BaseField::from_fn(g, |y1, _| (2.0 * PI * y1).cos());
        assert!(b.sub(&expected).sup_norm() < 1e-13);
        assert!(v.sup_norm() < 1e-13);

        let mixed = ScalarField::from_fn(g, |p| (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos());
        let (b, v) = vertical_decompose(&mixed, &omega);
        assert!(b.sup_norm() < 1e-13);
        assert!(v.sub(&mixed).sup_norm() < 1e-13);
        // π_B(f_V) = 0 holds after the split
        assert!(fiber_pushforward(&v, &omega).sup_norm() < 1e-13);
    }

    #[test]
    fn push_chi_h_flat() {
        let omega = product_metric(1.0, 1.0);
        let chi = product_metric(2.0, 3.0);
        let pushed = push_chi_h(&chi, &omega).unwrap();
        assert!(
            pushed
                .coeff
                .sub(&BaseField::constant(grid(), 3.0))
                .sup_norm()
                < 1e-13
        );
        assert!(pushed.positivity_margin() > 0.0);
    }

    #[test]
    fn push_chi_h_positive_for_positive_chi() {
        // positivity of π_B(χ_H) needs only χ > 0 and relative Kähler ω_X
        let g = grid();
        let mut omega = product_metric(1.0, 1.0);
        omega.wz = ScalarField::constant(g, 0.3);
        let chi = product_metric(2.0, 3.0).add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.05 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })));
        chi.require_positive().unwrap();
        let pushed = push_chi_h(&chi, &omega).unwrap();
        assert!(pushed.positivity_margin() > 0.0);
    }

    #[test]
    fn cb_examples() {
        let g = grid();
        let omega = product_metric(1.0, 1.0);
        let chi = product_metric(2.0, 3.0);
        let (cb, dev) = fiber_constant_cb(&chi, &omega);
        assert!((cb - 2.0).abs() < 1e-14);
        assert!(dev < 1e-14);

        // ∂∂̄-shifted χ stays in class: c_b independent of b
        let chi_shift = chi.add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.1 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })));
        let (cb, dev) = fiber_constant_cb(&chi_shift, &omega);
        assert!((cb - 2.0).abs() < 1e-13);
        assert!(dev < 1e-11, "deviation {dev:.3e}");

        // hand-assembled non-closed coefficients (fiber mean of χ_{ww̄} varies
        // with the base point): deviation is reported, not an error
        let mut raw = product_metric(2.0, 3.0);
        raw.ww = ScalarField::from_fn(g, |p| 2.0 + 0.3 * (2.0 * PI * p[0]).cos());
        raw.closed_by_construction = false;
        let (_, dev) = fiber_constant_cb(&raw, &omega);
        assert!(dev > 1e-3, "expected visible deviation, got {dev:.3e}");
    }

    #[test]
    fn fiber_volume_independent_of_b_for_closed_forms() {
        let g = grid();
        let omega = product_metric(1.0, 1.0).add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.03 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })));
        let vb = fiber_volume(&omega);
        let mean = vb.integrate();
        let dev = vb
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max((v.re - mean).abs()));
        assert!(dev < 1e-11, "V_b deviation {dev:.3e}");
    }

    #[test]
    fn pushforward_of_lift_is_identity() {
        let g = grid();
        let omega = product_metric(1.0, 1.0).add(&ddbar(&ScalarField::from_fn(g, |p| {
            0.04 * (2.0 * PI * p[3]).sin() * (2.0 * PI * p[1]).cos()
        })));
        let b = BaseField::from_fn(g, |y1, y2| 1.0 + 0.5 * (2.0 * PI * (y1 + y2)).cos());
        let round = fiber_pushforward(&b.lift(), &omega);
        assert!(round.sub(&b).sup_norm() < 1e-12);
    }
}
