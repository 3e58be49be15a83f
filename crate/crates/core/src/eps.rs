//! Truncated power-series arithmetic in ε = 1/k with field coefficients, and
//! the blockwise inversion of the adiabatic metric g_k = ω_X + kω_B + i∂∂̄Φ.
//!
//! g_k has a k¹ entry in the horizontal block, so it is not an ε-series;
//! with the column scaling P = diag(1, ε) the product G(ε) = g_k·P is regular
//! at ε = 0 with invertible leading block
//!
//!   G(0) = [[g_{ww̄}, 0], [g_{zw̄}, h]],
//!
//! and g_k⁻¹ = P·G(ε)⁻¹ is a genuine ε-series. Its leading coefficient is
//! [[g_{ww̄}⁻¹, 0], [0, 0]] and the ε¹ horizontal entry is h⁻¹ = ω_B⁻¹.
//!
//! Base potentials φ_{i,B} enter the stack at k^{2−i} and only exist for
//! i ≥ 2 (the construction never populates i = 0, 1), so G(0) is unaffected
//! by them; vertical potentials φ_{i,V} enter at k^{−i} from i = 1 on.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{BaseField, Grid4, ScalarField};
use crate::fibration::BaseForm;
use crate::forms::{ddbar, FormField};

/// Coefficient types usable in a truncated series.
pub trait Coeff: Clone {
    fn zeros_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, s: f64) -> Self;
    fn sup_norm(&self) -> f64;
}

impl Coeff for ScalarField {
    fn zeros_like(&self) -> Self {
        ScalarField::zeros(self.grid)
    }
    fn add(&self, other: &Self) -> Self {
        ScalarField::add(self, other)
    }
    fn sub(&self, other: &Self) -> Self {
        ScalarField::sub(self, other)
    }
    fn mul(&self, other: &Self) -> Self {
        ScalarField::mul(self, other)
    }
    fn scale(&self, s: f64) -> Self {
        ScalarField::scale(self, s)
    }
    fn sup_norm(&self) -> f64 {
        ScalarField::sup_norm(self)
    }
}

/// 2×2 complex-matrix-valued field, entries [m11, m12, m21, m22]; not
/// assumed Hermitian (the column scaling breaks Hermiticity).
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub grid: Grid4,
    pub e: [ScalarField; 4],
}

impl MatrixField {
    pub fn zeros(grid: Grid4) -> Self {
        MatrixField {
            grid,
            e: [
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
            ],
        }
    }

    pub fn identity(grid: Grid4) -> Self {
        let mut m = MatrixField::zeros(grid);
        m.e[0] = ScalarField::constant(grid, 1.0);
        m.e[3] = ScalarField::constant(grid, 1.0);
        m
    }

    /// Hermitian coefficient matrix of a (1,1)-form.
    pub fn from_form(f: &FormField) -> Self {
        MatrixField {
            grid: f.grid,
            e: [f.ww.clone(), f.wz.clone(), f.g_zw(), f.zz.clone()],
        }
    }

    /// Pointwise 2×2 inverse; errors if the determinant degenerates.
    pub fn inverse(&self) -> Result<MatrixField> {
        let det = self.e[0]
            .mul(&self.e[3])
            .sub(&self.e[1].mul(&self.e[2]));
        let min_det = det.values.iter().fold(f64::INFINITY, |m, v| m.min(v.norm()));
        if min_det < 1e-12 {
            return Err(Error::SingularLeadingBlock { min_det });
        }
        Ok(MatrixField {
            grid: self.grid,
            e: [
                self.e[3].div(&det),
                self.e[1].scale(-1.0).div(&det),
                self.e[2].scale(-1.0).div(&det),
                self.e[0].div(&det),
            ],
        })
    }

    /// Trace against a constant-in-ε Hermitian form: tr(M·X).
    pub fn trace_against(&self, x: &MatrixField) -> ScalarField {
        self.e[0]
            .mul(&x.e[0])
            .add(&self.e[1].mul(&x.e[2]))
            .add(&self.e[2].mul(&x.e[1]))
            .add(&self.e[3].mul(&x.e[3]))
    }
}

impl Coeff for MatrixField {
    fn zeros_like(&self) -> Self {
        MatrixField::zeros(self.grid)
    }
    fn add(&self, other: &Self) -> Self {
        MatrixField {
            grid: self.grid,
            e: [
                self.e[0].add(&other.e[0]),
                self.e[1].add(&other.e[1]),
                self.e[2].add(&other.e[2]),
                self.e[3].add(&other.e[3]),
            ],
        }
    }
    fn sub(&self, other: &Self) -> Self {
        MatrixField {
            grid: self.grid,
            e: [
                self.e[0].sub(&other.e[0]),
                self.e[1].sub(&other.e[1]),
                self.e[2].sub(&other.e[2]),
                self.e[3].sub(&other.e[3]),
            ],
        }
    }
    fn mul(&self, other: &Self) -> Self {
        MatrixField {
            grid: self.grid,
            e: [
                self.e[0].mul(&other.e[0]).add(&self.e[1].mul(&other.e[2])),
                self.e[0].mul(&other.e[1]).add(&self.e[1].mul(&other.e[3])),
                self.e[2].mul(&other.e[0]).add(&self.e[3].mul(&other.e[2])),
                self.e[2].mul(&other.e[1]).add(&self.e[3].mul(&other.e[3])),
            ],
        }
    }
    fn scale(&self, s: f64) -> Self {
        MatrixField {
            grid: self.grid,
            e: [
                self.e[0].scale(s),
                self.e[1].scale(s),
                self.e[2].scale(s),
                self.e[3].scale(s),
            ],
        }
    }
    fn sup_norm(&self) -> f64 {
        self.e.iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }
}

/// Truncated polynomial Σ_{i=0}^{R} cᵢ εⁱ; arithmetic never reads beyond the
/// truncation order R.
#[derive(Clone, Debug)]
pub struct EpsSeries<T: Coeff> {
    pub coeffs: Vec<T>,
}

impl<T: Coeff> EpsSeries<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        assert!(!coeffs.is_empty());
        EpsSeries { coeffs }
    }

    pub fn zero(template: &T, order: usize) -> Self {
        EpsSeries {
            coeffs: (0..=order).map(|_| template.zeros_like()).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, i: usize) -> &T {
        &self.coeffs[i]
    }

    fn check_order(&self, other: &Self) -> Result<()> {
        if self.order() != other.order() {
            return Err(Error::GridMismatch(format!(
                "series truncation mismatch: {} vs {}",
                self.order(),
                other.order()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_order(other)?;
        Ok(EpsSeries {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    /// Cauchy product truncated at the common order; exact at each retained
    /// order.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_order(other)?;
        let order = self.order();
        let mut coeffs: Vec<T> = (0..=order)
            .map(|_| self.coeffs[0].zeros_like())
            .collect();
        for i in 0..=order {
            for j in 0..=(order - i) {
                coeffs[i + j] = coeffs[i + j].add(&self.coeffs[i].mul(&other.coeffs[j]));
            }
        }
        Ok(EpsSeries { coeffs })
    }

    pub fn scale(&self, s: f64) -> Self {
        EpsSeries {
            coeffs: self.coeffs.iter().map(|c| c.scale(s)).collect(),
        }
    }

    /// Horner evaluation at a concrete ε.
    pub fn eval(&self, eps: f64) -> T {
        let mut acc = self.coeffs[self.order()].clone();
        for i in (0..self.order()).rev() {
            acc = acc.scale(eps).add(&self.coeffs[i]);
        }
        acc
    }
}

/// Series inverse of a matrix series with invertible leading coefficient:
/// B₀ = A₀⁻¹, B_j = −B₀ Σ_{i=1}^{j} A_i B_{j−i} (truncated Neumann series).
pub fn invert_series(a: &EpsSeries<MatrixField>) -> Result<EpsSeries<MatrixField>> {
    let b0 = a.coeffs[0].inverse()?;
    let order = a.order();
    let mut b: Vec<MatrixField> = vec![b0.clone()];
    for j in 1..=order {
        let mut s = a.coeffs[0].zeros_like();
        for i in 1..=j {
            s = s.add(&a.coeffs[i].mul(&b[j - i]));
        }
        b.push(b0.mul(&s).scale(-1.0));
    }
    Ok(EpsSeries { coeffs: b })
}

/// The scaled metric series G(ε) = g_k·diag(1, ε) together with the inverse
/// metric series g_k⁻¹ = diag(1, ε)·G⁻¹.
#[derive(Clone, Debug)]
pub struct AdiabaticMetric {
    /// G(ε); a genuine matrix polynomial in ε.
    pub scaled: EpsSeries<MatrixField>,
    /// g_k⁻¹ as an ε-series (row 2 of G⁻¹ shifted up one order).
    pub ginv: EpsSeries<MatrixField>,
}

/// Build and invert the adiabatic metric series to the given order.
///
/// `base_pots[j]` is φ_{j+2,B} (entering the potential at k^{−j}), and
/// `vert_pots[j]` is φ_{j+1,V} (entering at k^{−j−1}).
pub fn invert_adiabatic_metric(
    omega_x: &FormField,
    omega_b: &BaseForm,
    base_pots: &[BaseField],
    vert_pots: &[ScalarField],
    order: usize,
) -> Result<AdiabaticMetric> {
    omega_x.require_relatively_kahler()?;
    let grid = omega_x.grid;
    if omega_b.positivity_margin() <= 0.0 {
        return Err(Error::Config(
            "omega_B must be positive for the adiabatic family".into(),
        ));
    }

    // ddbar of each vertical potential, reused across G-orders
    let dd_vert: Vec<FormField> = vert_pots.iter().map(ddbar).collect();
    // i∂∂̄ of a lifted base potential has only the zz̄ coefficient
    let dd_base_zz: Vec<ScalarField> = base_pots
        .iter()
        .map(|p| {
            p.derivative(crate::field::CDir::Z)
                .derivative(crate::field::CDir::ZBar)
                .lift()
        })
        .collect();

    let h = omega_b.coeff.lift();
    let mut coeffs: Vec<MatrixField> = Vec::with_capacity(order + 1);
    for j in 0..=order {
        let mut g = MatrixField::zeros(grid);
        if j == 0 {
            // [[g_ww̄, 0], [g_zw̄, h]]
            g.e[0] = omega_x.ww.clone();
            g.e[2] = omega_x.g_zw();
            g.e[3] = h.clone();
        }
        if j == 1 {
            // ε-scaled column 2 of ω_X
            g.e[1] = g.e[1].add(&omega_x.wz);
            g.e[3] = g.e[3].add(&omega_x.zz);
        }
        // vertical potential φ_{j,V} (index j−1) in column 1 at ε^j
        if j >= 1 && j - 1 < dd_vert.len() {
            let dd = &dd_vert[j - 1];
            g.e[0] = g.e[0].add(&dd.ww);
            g.e[2] = g.e[2].add(&dd.g_zw());
        }
        // vertical potential φ_{j−1,V} (index j−2) in the scaled column 2
        if j >= 2 && j - 2 < dd_vert.len() {
            let dd = &dd_vert[j - 2];
            g.e[1] = g.e[1].add(&dd.wz);
            g.e[3] = g.e[3].add(&dd.zz);
        }
        // base potential φ_{j+1,B} (index j−1) in the scaled column 2 at ε^j
        if j >= 1 && j - 1 < dd_base_zz.len() {
            g.e[3] = g.e[3].add(&dd_base_zz[j - 1]);
        }
        coeffs.push(g);
    }
    let scaled = EpsSeries::new(coeffs);
    let b = invert_series(&scaled)?;

    // g_k⁻¹ = P·B: row 1 of order j is row 1 of B_j, row 2 is row 2 of B_{j−1}
    let mut ginv_coeffs: Vec<MatrixField> = Vec::with_capacity(order + 1);
    for j in 0..=order {
        let mut m = MatrixField::zeros(grid);
        m.e[0] = b.coeffs[j].e[0].clone();
        m.e[1] = b.coeffs[j].e[1].clone();
        if j >= 1 {
            m.e[2] = b.coeffs[j - 1].e[2].clone();
            m.e[3] = b.coeffs[j - 1].e[3].clone();
        }
        ginv_coeffs.push(m);
    }
    Ok(AdiabaticMetric {
        scaled,
        ginv: EpsSeries::new(ginv_coeffs),
    })
}

/// ε-series of the trace Λ_{ω_k}χ = tr(g_k⁻¹ X).
pub fn trace_series(ginv: &EpsSeries<MatrixField>, chi: &FormField) -> EpsSeries<ScalarField> {
    let x = MatrixField::from_form(chi);
    EpsSeries {
        coeffs: ginv
            .coeffs
            .iter()
            .map(|m| m.trace_against(&x).into_real())
            .collect(),
    }
}

/// ε-series of the trace linearization −g^{mq̄}(∂∂̄φ)_{mn̄} g^{pn̄} χ_{pq̄}
/// in the direction φ: the series −tr(Ginv·H·Ginv·X) with H = i∂∂̄φ.
pub fn linearized_trace_series(
    ginv: &EpsSeries<MatrixField>,
    chi: &FormField,
    phi: &ScalarField,
) -> Result<EpsSeries<ScalarField>> {
    let x = MatrixField::from_form(chi);
    let h = MatrixField::from_form(&ddbar(phi));
    let hx = |m: &MatrixField| h.mul(m);
    // series (H·Ginv) then Ginv·(H·Ginv), trace against X
    let h_ginv = EpsSeries::new(ginv.coeffs.iter().map(hx).collect::<Vec<_>>());
    let full = ginv.mul(&h_ginv)?;
    Ok(EpsSeries {
        coeffs: full
            .coeffs
            .iter()
            .map(|m| {
                m.trace_against(&x)
                    .scale(-1.0)
                    .map(|v| Complex64::new(v.re, 0.0))
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibration::{fiber_pushforward, push_chi_h, Splitting};
    use crate::forms::{FormField, HermitianConst};
    use crate::jlinear::{BaseProblem, SolverOptions};
    use std::f64::consts::PI;

    fn grid() -> Grid4 {
        Grid4::new(16, 16).unwrap()
    }

    /// ω_X = i dw∧dw̄ (purely vertical), ω_B = i dz∧dz̄: ω_k = diag(1, k).
    fn flat_family() -> (FormField, BaseForm) {
        let g = grid();
        (
            FormField::constant(g, HermitianConst::diag(1.0, 0.0)),
            BaseForm::constant(g, 1.0),
        )
    }

    fn realize_flat(k: f64) -> FormField {
        FormField::constant(grid(), HermitianConst::diag(1.0, k))
    }

    #[test]
    fn scalar_series_arithmetic() {
        let g = grid();
        let one = ScalarField::constant(g, 1.0);
        let f = ScalarField::from_fn(g, |p| 0.3 * (2.0 * PI * p[2]).cos());
        // (1 + εf)(1 − εf) = 1 at R = 1
        let a = EpsSeries::new(vec![one.clone(), f.clone()]);
        let b = EpsSeries::new(vec![one.clone(), f.scale(-1.0)]);
        let prod = a.mul(&b).unwrap();
        assert!(prod.coeff(0).sub(&one).sup_norm() < 1e-14);
        assert!(prod.coeff(1).sup_norm() < 1e-14);

        // a·1 = a
        let id = EpsSeries::new(vec![one.clone(), ScalarField::zeros(g)]);
        let back = a.mul(&id).unwrap();
        assert!(back.coeff(0).sub(a.coeff(0)).sup_norm() < 1e-14);
        assert!(back.coeff(1).sub(a.coeff(1)).sup_norm() < 1e-14);
    }

    #[test]
    fn series_mul_matches_evaluation_interpolation() {
        // coefficient at ε² of a product vs a polynomial fit through
        // evaluations at three sample ε values
        let g = grid();
        let mk = |s: f64, m1: f64, m2: f64| {
            EpsSeries::new(vec![
                ScalarField::from_fn(g, |p| s + 0.2 * (2.0 * PI * p[2]).cos()),
                ScalarField::from_fn(g, |p| m1 * (2.0 * PI * p[0]).cos()),
                ScalarField::from_fn(g, |p| m2 * (2.0 * PI * (p[1] + p[3])).sin()),
            ])
        };
        let a = mk(1.0, 0.4, 0.1);
        let b = mk(2.0, -0.3, 0.2);
        let prod = a.mul(&b).unwrap();

        // direct check: coefficient of ε² equals a₀b₂ + a₁b₁ + a₂b₀
        let direct = a
            .coeff(0)
            .mul(b.coeff(2))
            .add(&a.coeff(1).mul(b.coeff(1)))
            .add(&a.coeff(2).mul(b.coeff(0)));
        assert!(prod.coeff(2).sub(&direct).sup_norm() < 1e-13);

        // evaluation-interpolation oracle at a reference grid point: the
        // product of the full (untruncated) polynomials is degree 4, so fit
        // through 5 evaluation points and read off the ε² coefficient.
        let idx = [2usize, 3, 5, 7];
        let eps_samples = [0.1, 0.2, 0.3, 0.4, 0.5];
        let values: Vec<f64> = eps_samples
            .iter()
            .map(|&e| (a.eval(e).values[idx] * b.eval(e).values[idx]).re)
            .collect();
        // solve the 5×5 Vandermonde system by Gaussian elimination
        let mut m = [[0.0f64; 6]; 5];
        for (r, &e) in eps_samples.iter().enumerate() {
            let mut p = 1.0;
            for c in 0..5 {
                m[r][c] = p;
                p *= e;
            }
            m[r][5] = values[r];
        }
        for col in 0..5 {
            let piv = (col..5).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            for r in 0..5 {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..6 {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        let fitted_eps2 = m[2][5] / m[2][2];
        let series_eps2 = prod.coeff(2).values[idx].re;
        assert!(
            (fitted_eps2 - series_eps2).abs() < 1e-9,
            "fit {fitted_eps2}, series {series_eps2}"
        );
    }

    #[test]
    fn flat_inverse_is_exact_two_terms() {
        let (omega_x, omega_b) = flat_family();
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], 4).unwrap();
        let ginv = &metric.ginv;
        // diag(1, 0) + ε diag(0, 1), all higher coefficients zero
        let g = grid();
        let one = ScalarField::constant(g, 1.0);
        assert!(ginv.coeff(0).e[0].sub(&one).sup_norm() < 1e-14);
        assert!(ginv.coeff(0).e[3].sup_norm() < 1e-14);
        assert!(ginv.coeff(1).e[3].sub(&one).sup_norm() < 1e-14);
        assert!(ginv.coeff(1).e[0].sup_norm() < 1e-14);
        for j in 2..=4 {
            assert!(ginv.coeff(j).sup_norm() < 1e-14, "order {j} should vanish");
        }
    }

    #[test]
    fn leading_block_structure_with_mixed_term() {
        // generic relatively Kähler ω_X with mixed term: ε⁰ block is
        // [[g_V⁻¹, 0], [0, 0]] and the ε¹ (2,2) entry is ω_B⁻¹
        let g = grid();
        let mut omega_x = FormField::constant(g, HermitianConst::diag(1.0, 0.4));
        omega_x.wz = ScalarField::from_fn(g, |p| 0.1 + 0.05 * (2.0 * PI * p[2]).cos());
        let omega_x = omega_x.add(&crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
            0.02 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })));
        let omega_b = BaseForm {
            coeff: BaseField::from_fn(g, |y1, _| 1.0 + 0.2 * (2.0 * PI * y1).cos()),
        };
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], 3).unwrap();
        let g0 = metric.ginv.coeff(0);
        let inv_gww = ScalarField::constant(g, 1.0).div(&omega_x.ww);
        assert!(g0.e[0].sub(&inv_gww).sup_norm() < 1e-12);
        assert!(g0.e[1].sup_norm() < 1e-14);
        assert!(g0.e[2].sup_norm() < 1e-14);
        assert!(g0.e[3].sup_norm() < 1e-14);
        let inv_h = ScalarField::constant(g, 1.0).div(&omega_b.coeff.lift());
        assert!(metric.ginv.coeff(1).e[3].sub(&inv_h).sup_norm() < 1e-12);
    }

    #[test]
    fn neumann_identity() {
        let g = grid();
        let mut omega_x = FormField::constant(g, HermitianConst::diag(1.0, 0.3));
        omega_x.wz = ScalarField::from_fn(g, |p| 0.08 * (2.0 * PI * p[0]).cos());
        let omega_b = BaseForm {
            coeff: BaseField::from_fn(g, |_, y2| 1.0 + 0.15 * (2.0 * PI * y2).sin()),
        };
        let vert = vec![ScalarField::from_fn(g, |p| {
            0.03 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
        })];
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &vert, 3).unwrap();
        let b = invert_series(&metric.scaled).unwrap();
        let prod = metric.scaled.mul(&b).unwrap();
        let id = MatrixField::identity(g);
        assert!(prod.coeff(0).sub(&id).sup_norm() < 1e-10);
        for j in 1..=3 {
            assert!(
                prod.coeff(j).sup_norm() < 1e-10,
                "order {j}: {:.3e}",
                prod.coeff(j).sup_norm()
            );
        }
    }

    #[test]
    fn trace_series_flat_exact() {
        let (omega_x, omega_b) = flat_family();
        let chi = FormField::constant(grid(), HermitianConst::diag(2.0, 3.0));
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], 3).unwrap();
        let t = trace_series(&metric.ginv, &chi);
        let g = grid();
        assert!(t.coeff(0).sub(&ScalarField::constant(g, 2.0)).sup_norm() < 1e-13);
        assert!(t.coeff(1).sub(&ScalarField::constant(g, 3.0)).sup_norm() < 1e-13);
        assert!(t.coeff(2).sup_norm() < 1e-13);
        assert!(t.coeff(3).sup_norm() < 1e-13);
    }

    #[test]
    fn trace_series_leading_coefficient_is_vertical_trace() {
        let g = grid();
        let mut omega_x = FormField::constant(g, HermitianConst::diag(1.0, 0.2));
        omega_x.wz = ScalarField::from_fn(g, |p| 0.07 * (2.0 * PI * p[2]).sin());
        let omega_x = omega_x.add(&crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
            0.02 * (2.0 * PI * (p[0] + p[2])).cos()
        })));
        let omega_b = BaseForm::constant(g, 1.0);
        let chi = FormField::constant(g, HermitianConst::diag(2.0, 3.0)).add(
            &crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
                0.05 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
            })),
        );
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], 2).unwrap();
        let t = trace_series(&metric.ginv, &chi);
        // ε⁰ coefficient = Λ_V χ = χ_{ww̄}/g_{ww̄}
        let expected = chi.ww.div(&omega_x.ww);
        assert!(t.coeff(0).sub(&expected).sup_norm() < 1e-12);
        // ε¹ base-mean = π_B(χ_H)/h
        let pushed = push_chi_h(&chi, &omega_x).unwrap();
        let t1_mean = fiber_pushforward(t.coeff(1), &omega_x);
        let expected1 = pushed.coeff.div(&omega_b.coeff);
        assert!(t1_mean.sub(&expected1).sup_norm() < 1e-11);
        // sanity: the split of χ feeds the same leading coefficient
        let parts = Splitting::of(&omega_x).unwrap().split(&chi);
        assert!(
            t.coeff(0)
                .sub(&parts.chi_v.div(&omega_x.ww))
                .sup_norm()
                < 1e-12
        );
    }

    #[test]
    fn trace_series_remainder_order() {
        // evaluate at ε = 1/k and compare with the direct trace at k; the
        // remainder is O(ε^{R+1}) with constant fitted from two ks
        let g = grid();
        let omega_x = FormField::constant(g, HermitianConst::diag(1.0, 0.0)).add(
            &crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
                0.04 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
            })),
        );
        let omega_b = BaseForm {
            coeff: BaseField::from_fn(g, |y1, _| 1.0 + 0.1 * (2.0 * PI * y1).cos()),
        };
        let chi = FormField::constant(g, HermitianConst::diag(2.0, 3.0)).add(
            &crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
                0.05 * (2.0 * PI * (p[2] + p[1])).cos()
            })),
        );
        let r = 2usize;
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], r).unwrap();
        let t = trace_series(&metric.ginv, &chi);

        let remainder = |k: f64| {
            let omega_k = omega_x.add(&omega_b.pullback(g).scale(k));
            let direct = crate::forms::trace(&omega_k, &chi).unwrap();
            t.eval(1.0 / k).sub(&direct).sup_norm()
        };
        let e32 = remainder(32.0);
        let e64 = remainder(64.0);
        let c = e32 * 32f64.powi(r as i32 + 1);
        assert!(
            e64 <= 1.5 * c / 64f64.powi(r as i32 + 1),
            "e32 {e32:.3e}, e64 {e64:.3e}"
        );
    }

    #[test]
    fn inverse_series_remainder_order() {
        let g = grid();
        let mut omega_x = FormField::constant(g, HermitianConst::diag(1.0, 0.5));
        omega_x.wz = ScalarField::from_fn(g, |p| 0.1 * (2.0 * PI * p[2]).cos());
        let omega_b = BaseForm::constant(g, 1.0);
        let r = 3usize;
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], r).unwrap();

        let remainder = |k: f64| {
            let omega_k = omega_x.add(&omega_b.pullback(g).scale(k));
            let direct = MatrixField::from_form(&omega_k).inverse().unwrap();
            metric.ginv.eval(1.0 / k).sub(&direct).sup_norm()
        };
        let e32 = remainder(32.0);
        let e64 = remainder(64.0);
        let c = e32 * 32f64.powi(r as i32 + 1);
        assert!(
            e64 <= 1.5 * c / 64f64.powi(r as i32 + 1),
            "e32 {e32:.3e}, e64 {e64:.3e}"
        );
        // and the two-term flat check: direct inversion at k = 64 of the flat
        // family is reproduced exactly
        let (fx, fb) = flat_family();
        let m = invert_adiabatic_metric(&fx, &fb, &[], &[], r).unwrap();
        let direct = MatrixField::from_form(&realize_flat(64.0)).inverse().unwrap();
        assert!(m.ginv.eval(1.0 / 64.0).sub(&direct).sup_norm() < 1e-14);
    }

    #[test]
    fn linearized_series_base_pullback_structure() {
        // normalized, base-solved configuration
        let g = grid();
        let chi = FormField::constant(g, HermitianConst::diag(2.0, 3.0)).add(
            &crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
                0.05 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
            })),
        );
        let omega_x0 = FormField::constant(g, HermitianConst::diag(1.0, 0.0));
        let omega_x = crate::jlinear::fiberwise_normalize(&omega_x0, &chi).unwrap();
        // base solve: h = π_B(χ_H)/c_B with c_B fixed by unit base area
        let chi_b = push_chi_h(&chi, &omega_x).unwrap();
        let c_b = chi_b.coeff.integrate();
        let h = BaseForm {
            coeff: chi_b.coeff.scale(1.0 / c_b),
        };
        let metric = invert_adiabatic_metric(&omega_x, &h, &[], &[], 2).unwrap();

        for (a1, a2) in [(1.0, 0.0), (0.0, 1.0), (0.7, -0.4)] {
            let phi_base = BaseField::from_fn(g, |y1, y2| {
                a1 * (2.0 * PI * y1).cos() + a2 * (2.0 * PI * y2).sin()
            });
            let phi = phi_base.lift();
            let series = linearized_trace_series(&metric.ginv, &chi, &phi).unwrap();
            // ε⁰ and ε¹ coefficients vanish identically for base pullbacks
            assert!(series.coeff(0).sup_norm() < 1e-12);
            assert!(series.coeff(1).sup_norm() < 1e-10, "{:.3e}", series.coeff(1).sup_norm());
            // fiber mean of the ε² coefficient is the base operator
            let mean2 = fiber_pushforward(series.coeff(2), &omega_x);
            let base_problem = BaseProblem::new(h.clone(), chi_b.clone()).unwrap();
            let expected = base_problem.apply_f(&phi_base);
            assert!(
                mean2.sub(&expected).sup_norm() < 1e-8,
                "gap {:.3e}",
                mean2.sub(&expected).sup_norm()
            );
        }
    }

    #[test]
    fn linearized_series_vertical_leading_term() {
        // fiber-supported φ: the ε⁰ coefficient matches the fiberwise
        // operator (at normalized ω_X the gradient correction vanishes)
        let g = grid();
        let chi = FormField::constant(g, HermitianConst::diag(2.0, 3.0)).add(
            &crate::forms::ddbar(&ScalarField::from_fn(g, |p| {
                0.04 * (2.0 * PI * p[2]).cos() * (2.0 * PI * p[0]).cos()
            })),
        );
        let omega_x = crate::jlinear::fiberwise_normalize(
            &FormField::constant(g, HermitianConst::diag(1.0, 0.0)),
            &chi,
        )
        .unwrap();
        let omega_b = BaseForm::constant(g, 1.0);
        let metric = invert_adiabatic_metric(&omega_x, &omega_b, &[], &[], 2).unwrap();

        let phi = ScalarField::from_fn(g, |p| {
            (2.0 * PI * p[2]).cos() + 0.5 * (2.0 * PI * (p[2] + p[3])).sin()
        });
        let series = linearized_trace_series(&metric.ginv, &chi, &phi).unwrap();
        // vertical operator: −(χ_{ww̄}/g_{ww̄}²)·∂_w∂_w̄φ
        let lap = phi
            .derivative(crate::field::CDir::W)
            .derivative(crate::field::CDir::WBar);
        let expected = chi
            .ww
            .div(&omega_x.ww)
            .div(&omega_x.ww)
            .mul(&lap)
            .scale(-1.0);
        assert!(
            series.coeff(0).sub(&expected).sup_norm() < 1e-11,
            "gap {:.3e}",
            series.coeff(0).sub(&expected).sup_norm()
        );
    }

    #[test]
    fn series_order_mismatch_is_rejected() {
        let g = grid();
        let one = ScalarField::constant(g, 1.0);
        let a = EpsSeries::new(vec![one.clone(), one.clone()]);
        let b = EpsSeries::new(vec![one.clone()]);
        assert!(matches!(a.mul(&b), Err(Error::GridMismatch(_))));
    }
}
