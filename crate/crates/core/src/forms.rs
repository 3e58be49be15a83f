//! Real (1,1)-forms on the product torus as Hermitian coefficient fields.
//!
//! A form ω = i g_{pq̄} dz^p ∧ dz̄^q in the coordinates (w, z) is stored by the
//! three independent coefficients g_{ww̄}, g_{wz̄}, g_{zz̄} (with
//! g_{zw̄} = conj(g_{wz̄})). At complex dimension two every wedge integral
//! reduces to the mixed-determinant polynomial
//!
//!   perm(α, β) = α_{ww̄}β_{zz̄} + α_{zz̄}β_{ww̄} − α_{wz̄}β_{zw̄} − α_{zw̄}β_{wz̄},
//!
//! normalized so that ∫ α∧β = ∫ perm(α, β) dV and ∫ ω² = 2∫ det g dV.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CDir, Grid4, ScalarField};
use crate::modes::{sample_terms, FourierTerm};
use crate::tol;

/// Hermitian-matrix-valued coefficient field of a real (1,1)-form.
#[derive(Clone, Debug)]
pub struct FormField {
    pub grid: Grid4,
    /// g_{ww̄}; real.
    pub ww: ScalarField,
    /// g_{wz̄}; complex, g_{zw̄} is its conjugate.
    pub wz: ScalarField,
    /// g_{zz̄}; real.
    pub zz: ScalarField,
    /// Set when the form was assembled as constants + ∂∂̄(potential), which
    /// is exactly closed.
    pub closed_by_construction: bool,
}

impl FormField {
    pub fn zeros(grid: Grid4) -> Self {
        FormField {
            grid,
            ww: ScalarField::zeros(grid),
            wz: ScalarField::zeros(grid),
            zz: ScalarField::zeros(grid),
            closed_by_construction: true,
        }
    }

    /// Constant-coefficient form from a Hermitian matrix.
    pub fn constant(grid: Grid4, c: HermitianConst) -> Self {
        let wz = ScalarField::constant(grid, 0.0)
            .map(|_| Complex64::new(c.wz_re, c.wz_im));
        FormField {
            grid,
            ww: ScalarField::constant(grid, c.ww),
            wz,
            zz: ScalarField::constant(grid, c.zz),
            closed_by_construction: true,
        }
    }

    pub fn g_zw(&self) -> ScalarField {
        self.wz.conj()
    }

    pub fn add(&self, other: &FormField) -> Self {
        FormField {
            grid: self.grid,
            ww: self.ww.add(&other.ww),
            wz: self.wz.add(&other.wz),
            zz: self.zz.add(&other.zz),
            closed_by_construction: self.closed_by_construction && other.closed_by_construction,
        }
    }

    pub fn sub(&self, other: &FormField) -> Self {
        FormField {
            grid: self.grid,
            ww: self.ww.sub(&other.ww),
            wz: self.wz.sub(&other.wz),
            zz: self.zz.sub(&other.zz),
            closed_by_construction: self.closed_by_construction && other.closed_by_construction,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        FormField {
            grid: self.grid,
            ww: self.ww.scale(s),
            wz: self.wz.scale(s),
            zz: self.zz.scale(s),
            closed_by_construction: self.closed_by_construction,
        }
    }

    /// Pointwise determinant of the coefficient matrix; real.
    pub fn det(&self) -> ScalarField {
        let cross = self.wz.mul(&self.wz.conj());
        self.ww.mul(&self.zz).sub(&cross).into_real()
    }

    /// Entries (m11, m12, m21, m22) of the pointwise matrix inverse.
    pub fn inverse_entries(&self) -> [ScalarField; 4] {
        let det = self.det();
        [
            self.zz.div(&det),
            self.wz.scale(-1.0).div(&det),
            self.g_zw().scale(-1.0).div(&det),
            self.ww.div(&det),
        ]
    }

    /// Minimum (over the grid) of the smaller eigenvalue of the 2×2
    /// Hermitian coefficient matrix, plus where it is attained.
    pub fn positivity_margin(&self) -> (f64, [usize; 4]) {
        let mut min = f64::INFINITY;
        let mut at = [0usize; 4];
        for (idx, a) in self.ww.values.indexed_iter() {
            let d = self.zz.values[idx];
            let b = self.wz.values[idx];
            let half_tr = 0.5 * (a.re + d.re);
            let half_diff = 0.5 * (a.re - d.re);
            let lam = half_tr - (half_diff * half_diff + b.norm_sqr()).sqrt();
            if lam < min {
                min = lam;
                at = [idx.0, idx.1, idx.2, idx.3];
            }
        }
        (min, at)
    }

    /// Errors with the offending eigenvalue and location unless the form is
    /// positive definite at every grid point.
    pub fn require_positive(&self) -> Result<()> {
        let (min_eig, index) = self.positivity_margin();
        if min_eig <= tol::POSITIVITY {
            return Err(Error::NotPositive { min_eig, index });
        }
        Ok(())
    }

    /// Positivity of the vertical block only (relative Kähler condition).
    pub fn require_relatively_kahler(&self) -> Result<()> {
        let mut min = f64::INFINITY;
        let mut at = [0usize; 4];
        for (idx, a) in self.ww.values.indexed_iter() {
            if a.re < min {
                min = a.re;
                at = [idx.0, idx.1, idx.2, idx.3];
            }
        }
        if min <= tol::POSITIVITY {
            return Err(Error::NotRelativelyKahler {
                min_vertical: min,
                index: at,
            });
        }
        Ok(())
    }

    /// Largest Hermiticity defect: max |Im| on the diagonal coefficients.
    pub fn hermitian_defect(&self) -> f64 {
        self.ww.max_imag().max(self.zz.max_imag())
    }

    pub fn sup_distance(&self, other: &FormField) -> f64 {
        self.ww
            .sub(&other.ww)
            .sup_norm()
            .max(self.wz.sub(&other.wz).sup_norm())
            .max(self.zz.sub(&other.zz).sup_norm())
    }
}

/// i∂∂̄ of a real potential as a Hermitian coefficient field:
/// coefficients (∂_p ∂_q̄ φ). Exactly closed by construction.
pub fn ddbar(phi: &ScalarField) -> FormField {
    debug_assert!(phi.max_imag() < 1e-8, "ddbar expects a real potential");
    let ww = phi.derivative(CDir::W).derivative(CDir::WBar);
    let wz = phi.derivative(CDir::W).derivative(CDir::ZBar);
    let zz = phi.derivative(CDir::Z).derivative(CDir::ZBar);
    FormField {
        grid: phi.grid,
        ww: ww.into_real(),
        wz,
        zz: zz.into_real(),
        closed_by_construction: true,
    }
}

/// Pointwise mixed determinant; ∫ α∧β = ∫ perm(α, β) dV and
/// perm(α, α) = 2 det α.
pub fn perm(a: &FormField, b: &FormField) -> ScalarField {
    let t1 = a.ww.mul(&b.zz);
    let t2 = a.zz.mul(&b.ww);
    let t3 = a.wz.mul(&b.g_zw());
    let t4 = a.g_zw().mul(&b.wz);
    t1.add(&t2).sub(&t3).sub(&t4)
}

/// Top-degree wedge integral ∫ α∧β over the total space.
pub fn wedge_top_integral(a: &FormField, b: &FormField) -> f64 {
    perm(a, b).integrate()
}

/// Pointwise trace tr(g⁻¹ X) of χ against a positive ω, computed via the
/// adjugate formula tr(g⁻¹X) = perm(χ, g)/det g.
pub fn trace(omega: &FormField, chi: &FormField) -> Result<ScalarField> {
    omega.require_positive()?;
    Ok(perm(chi, omega).div(&omega.det()).into_real())
}

/// Pointwise inner product (χ, α)_ω = tr(g⁻¹ X g⁻¹ A), via explicit matrix
/// products (a separate route from the adjugate identities).
pub fn inner_product(omega: &FormField, chi: &FormField, alpha: &FormField) -> Result<ScalarField> {
    omega.require_positive()?;
    let m = omega.inverse_entries();
    let x = [chi.ww.clone(), chi.wz.clone(), chi.g_zw(), chi.zz.clone()];
    let a = [
        alpha.ww.clone(),
        alpha.wz.clone(),
        alpha.g_zw(),
        alpha.zz.clone(),
    ];
    let mx = mat_mul(&m, &x);
    let ma = mat_mul(&m, &a);
    let prod = mat_mul(&mx, &ma);
    Ok(prod[0].add(&prod[3]).into_real())
}

/// Entry-wise 2×2 matrix product of coefficient-field matrices
/// laid out as [m11, m12, m21, m22].
pub fn mat_mul(a: &[ScalarField; 4], b: &[ScalarField; 4]) -> [ScalarField; 4] {
    [
        a[0].mul(&b[0]).add(&a[1].mul(&b[2])),
        a[0].mul(&b[1]).add(&a[1].mul(&b[3])),
        a[2].mul(&b[0]).add(&a[3].mul(&b[2])),
        a[2].mul(&b[1]).add(&a[3].mul(&b[3])),
    ]
}

/// The J-equation constant of the pair: c with n∫χ∧ω^{n−1} = c∫ωⁿ,
/// i.e. c = 2∫χ∧ω / ∫ω² at complex dimension two.
pub fn j_constant(chi: &FormField, omega: &FormField) -> Result<f64> {
    omega.require_positive()?;
    Ok(2.0 * wedge_top_integral(chi, omega) / wedge_top_integral(omega, omega))
}

/// Volume density of ω² up to the constant factor 2 (used for weighted
/// means, where the factor cancels).
pub fn volume_density(omega: &FormField) -> ScalarField {
    omega.det()
}

/// Bisection for the damping t at which ω + t·i∂∂̄φ loses positivity.
/// Returns None if the form stays positive up to t_max.
pub fn positivity_breakdown(omega: &FormField, phi: &ScalarField, t_max: f64) -> Option<f64> {
    let dd = ddbar(phi);
    let margin = |t: f64| omega.add(&dd.scale(t)).positivity_margin().0;
    if margin(t_max) > 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, t_max);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Constant Hermitian 2×2 matrix in the (w, z) coordinates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HermitianConst {
    pub ww: f64,
    #[serde(default)]
    pub wz_re: f64,
    #[serde(default)]
    pub wz_im: f64,
    pub zz: f64,
}

impl HermitianConst {
    pub fn diag(ww: f64, zz: f64) -> Self {
        HermitianConst {
            ww,
            wz_re: 0.0,
            wz_im: 0.0,
            zz,
        }
    }
}

/// ∂∂̄-lemma description of a closed (1,1)-form: a constant Hermitian part
/// plus i∂∂̄ of a finite Fourier potential. This is the config-file unit.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KahlerData {
    pub constant: HermitianConst,
    #[serde(default)]
    pub potential: Vec<FourierTerm>,
}

impl KahlerData {
    pub fn realize(&self, grid: Grid4) -> Result<FormField> {
        let base = FormField::constant(grid, self.constant);
        if self.potential.is_empty() {
            return Ok(base);
        }
        let pot = sample_terms(grid, &self.potential)?;
        Ok(base.add(&ddbar(&pot)))
    }
}
