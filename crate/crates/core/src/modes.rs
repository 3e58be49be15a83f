//! Finite Fourier-mode descriptions of real fields.
//!
//! Configured potentials are lists of cosine terms with integer frequencies,
//! which keeps every input exactly band-limited. The same representation
//! supports exact closed-form derivatives, so tests can cross-check the
//! FFT-based operators against an independent evaluation route.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{BaseField, CDir, Grid4, ScalarField};

/// One real Fourier term `amp · cos(2π k·u + phase)` with
/// k·u = k₁y₁ + k₂y₂ + k₃x₁ + k₄x₂ in the coordinate order (y₁, y₂, x₁, x₂).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct FourierTerm {
    pub freq: [i64; 4],
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

impl FourierTerm {
    pub fn eval(&self, p: [f64; 4]) -> f64 {
        let arg = 2.0
            * PI
            * (self.freq[0] as f64 * p[0]
                + self.freq[1] as f64 * p[1]
                + self.freq[2] as f64 * p[2]
                + self.freq[3] as f64 * p[3])
            + self.phase;
        self.amp * arg.cos()
    }
}

/// A real trigonometric polynomial stored as complex exponential modes
/// Σ aₖ e^{2πi k·u}, with a₋ₖ = conj(aₖ).
#[derive(Clone, Debug, Default)]
pub struct TrigPoly {
    pub coeffs: HashMap<[i64; 4], Complex64>,
}

impl TrigPoly {
    pub fn from_terms(terms: &[FourierTerm]) -> Self {
        let mut coeffs: HashMap<[i64; 4], Complex64> = HashMap::new();
        for t in terms {
            // amp·cos(θ + φ) = (amp/2)(e^{iφ}e^{iθ} + e^{−iφ}e^{−iθ})
            let half = 0.5 * t.amp;
            let plus = Complex64::from_polar(half, t.phase);
            let minus = Complex64::from_polar(half, -t.phase);
            let neg = [-t.freq[0], -t.freq[1], -t.freq[2], -t.freq[3]];
            *coeffs.entry(t.freq).or_insert(Complex64::new(0.0, 0.0)) += plus;
            *coeffs.entry(neg).or_insert(Complex64::new(0.0, 0.0)) += minus;
        }
        TrigPoly { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        let mut coeffs = HashMap::new();
        coeffs.insert([0, 0, 0, 0], Complex64::new(c, 0.0));
        TrigPoly { coeffs }
    }

    /// Exact complex-coordinate derivative: on mode k the symbol for ∂_w is
    /// π(k₄ + i k₃), for ∂_z it is π(k₂ + i k₁), with conjugate-direction
    /// symbols mirrored.
    pub fn derivative(&self, dir: CDir) -> Self {
        let mut coeffs = HashMap::new();
        for (k, a) in &self.coeffs {
            let sym = match dir {
                CDir::W => Complex64::new(PI * k[3] as f64, PI * k[2] as f64),
                CDir::WBar => Complex64::new(-PI * k[3] as f64, PI * k[2] as f64),
                CDir::Z => Complex64::new(PI * k[1] as f64, PI * k[0] as f64),
                CDir::ZBar => Complex64::new(-PI * k[1] as f64, PI * k[0] as f64),
            };
            let v = a * sym;
            if v.norm() > 0.0 {
                coeffs.insert(*k, v);
            }
        }
        TrigPoly { coeffs }
    }

    pub fn eval(&self, p: [f64; 4]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        // deterministic order
        let mut keys: Vec<_> = self.coeffs.keys().copied().collect();
        keys.sort();
        for k in keys {
            let a = self.coeffs[&k];
            let arg = 2.0
                * PI
                * (k[0] as f64 * p[0] + k[1] as f64 * p[1] + k[2] as f64 * p[2]
                    + k[3] as f64 * p[3]);
            acc += a * Complex64::from_polar(1.0, arg);
        }
        acc
    }

    pub fn sample(&self, grid: Grid4) -> ScalarField {
        let mut out = ScalarField::zeros(grid);
        let (nb, _, nf, _) = grid.shape();
        for iy1 in 0..nb {
            for iy2 in 0..nb {
                for ix1 in 0..nf {
                    for ix2 in 0..nf {
                        out.values[[iy1, iy2, ix1, ix2]] =
                            self.eval(grid.point(iy1, iy2, ix1, ix2));
                    }
                }
            }
        }
        out
    }

    /// Largest |frequency| per factor (fiber, base).
    pub fn band(&self) -> (i64, i64) {
        let mut bf = 0;
        let mut bb = 0;
        for k in self.coeffs.keys() {
            bb = bb.max(k[0].abs()).max(k[1].abs());
            bf = bf.max(k[2].abs()).max(k[3].abs());
        }
        (bf, bb)
    }
}

/// Sample a term list on the grid after validating the band limit.
pub fn sample_terms(grid: Grid4, terms: &[FourierTerm]) -> Result<ScalarField> {
    check_band(grid, terms)?;
    Ok(TrigPoly::from_terms(terms).sample(grid))
}

/// Sample base-only terms (fiber frequencies must be zero).
pub fn sample_base_terms(grid: Grid4, terms: &[FourierTerm]) -> Result<BaseField> {
    check_band(grid, terms)?;
    for t in terms {
        if t.freq[2] != 0 || t.freq[3] != 0 {
            return Err(Error::Config(format!(
                "base potential term has fiber frequency: {:?}",
                t.freq
            )));
        }
    }
    let poly = TrigPoly::from_terms(terms);
    let mut out = BaseField::zeros(grid);
    let nb = grid.n_base;
    for iy1 in 0..nb {
        for iy2 in 0..nb {
            out.values[[iy1, iy2]] = poly.eval([
                iy1 as f64 / nb as f64,
                iy2 as f64 / nb as f64,
                0.0,
                0.0,
            ]);
        }
    }
    Ok(out)
}

fn check_band(grid: Grid4, terms: &[FourierTerm]) -> Result<()> {
    let (bf, bb) = grid.band_limit();
    for t in terms {
        if t.freq[0].abs() > bb || t.freq[1].abs() > bb {
            return Err(Error::Config(format!(
                "base frequency {:?} exceeds band limit {bb}",
                t.freq
            )));
        }
        if t.freq[2].abs() > bf || t.freq[3].abs() > bf {
            return Err(Error::Config(format!(
                "fiber frequency {:?} exceeds band limit {bf}",
                t.freq
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_term_matches_closure() {
        let grid = Grid4::new(16, 8).unwrap();
        let term = FourierTerm {
            freq: [1, 0, 2, 0],
            amp: 0.7,
            phase: 0.3,
        };
        let f = sample_terms(grid, &[term]).unwrap();
        let g = ScalarField::from_fn(grid, |p| term.eval(p));
        assert!(f.sub(&g).sup_norm() < 1e-13);
        assert!(f.max_imag() < 1e-14);
    }

    #[test]
    fn trig_derivative_matches_fft_derivative() {
        let grid = Grid4::new(16, 16).unwrap();
        let terms = [
            FourierTerm {
                freq: [1, 0, 1, 0],
                amp: 0.4,
                phase: 0.0,
            },
            FourierTerm {
                freq: [0, 2, 0, 1],
                amp: 0.2,
                phase: 1.1,
            },
        ];
        let poly = TrigPoly::from_terms(&terms);
        let f = poly.sample(grid);
        for dir in [CDir::W, CDir::WBar, CDir::Z, CDir::ZBar] {
            let spectral = f.derivative(dir);
            let exact = poly.derivative(dir).sample(grid);
            assert!(
                spectral.sub(&exact).sup_norm() < 1e-12,
                "direction {dir:?}"
            );
        }
    }

    #[test]
    fn band_limit_enforced() {
        let grid = Grid4::new(8, 8).unwrap();
        let term = FourierTerm {
            freq: [0, 0, 3, 0],
            amp: 1.0,
            phase: 0.0,
        };
        assert!(sample_terms(grid, &[term]).is_err());
    }
}
