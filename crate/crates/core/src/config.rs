//! Experiment configuration: grid sizes, the three forms as constant parts
//! plus finite Fourier potentials, the k-list, orders, tolerances, and
//! output controls. Everything an experiment needs is in one JSON file with
//! an explicit schema version; runs are deterministic given the file plus
//! the seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fibration::BaseForm;
use crate::field::Grid4;
use crate::forms::{FormField, HermitianConst, KahlerData};
use crate::modes::{sample_base_terms, FourierTerm};
use crate::tol;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct GridConfig {
    pub n_fiber: usize,
    pub n_base: usize,
}

/// Base-form description: constant coefficient plus a base-only potential,
/// realized as h = c + ∂_z∂_z̄(potential).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BaseKahlerData {
    pub constant: f64,
    #[serde(default)]
    pub potential: Vec<FourierTerm>,
}

impl BaseKahlerData {
    pub fn realize(&self, grid: Grid4) -> Result<BaseForm> {
        let mut coeff = crate::field::BaseField::constant(grid, self.constant);
        if !self.potential.is_empty() {
            let pot = sample_base_terms(grid, &self.potential)?;
            coeff = coeff.add(
                &pot.derivative(crate::field::CDir::Z)
                    .derivative(crate::field::CDir::ZBar),
            );
        }
        Ok(BaseForm {
            coeff: coeff.map(|v| num_complex::Complex64::new(v.re, 0.0)),
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    /// Sup-norm residual for the elliptic solves.
    pub solver_residual: f64,
    /// Sup-norm residual target for the Newton completion.
    pub newton_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solver_residual: tol::SOLVER_RESIDUAL,
            newton_residual: tol::NEWTON_RESIDUAL,
        }
    }
}

fn default_threads() -> usize {
    0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub grid: GridConfig,
    pub chi: KahlerData,
    pub omega_x: KahlerData,
    pub omega_b: BaseKahlerData,
    pub k_list: Vec<f64>,
    pub order: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output_dir: String,
    pub seed: u64,
    /// 0 = all cores.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

/// The concrete geometry a config describes.
pub struct Realized {
    pub grid: Grid4,
    pub chi: FormField,
    pub omega_x: FormField,
    pub omega_b: BaseForm,
}

/// Per-form validation outcome recorded by `validate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub chi_margin: f64,
    pub omega_x_vertical_min: f64,
    pub omega_b_min: f64,
    pub omega_k_margins: Vec<(f64, f64)>,
    pub cb_mean: f64,
    pub cb_deviation: f64,
    pub vb_deviation: f64,
    pub passed: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form; embedded in every report.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn grid(&self) -> Result<Grid4> {
        Grid4::new(self.grid.n_fiber, self.grid.n_base)
    }

    /// Realize the configured forms on the grid (band limits enforced by
    /// the samplers).
    pub fn realize(&self) -> Result<Realized> {
        let grid = self.grid()?;
        let chi = self.chi.realize(grid)?;
        let omega_x = self.omega_x.realize(grid)?;
        let omega_b = self.omega_b.realize(grid)?;
        Ok(Realized {
            grid,
            chi,
            omega_x,
            omega_b,
        })
    }

    /// Full load-time validation: positivity of the three forms with margin
    /// reports, positivity of ω_k along the configured k-list, and the
    /// closedness witnesses (c_b and V_b constancy across fibers).
    pub fn validate(&self) -> Result<ValidationReport> {
        let realized = self.realize()?;
        let (chi_margin, _) = realized.chi.positivity_margin();
        let omega_x_vertical_min = realized
            .omega_x
            .ww
            .values
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.re));
        let omega_b_min = realized.omega_b.positivity_margin();

        let mut omega_k_margins = Vec::new();
        for &k in &self.k_list {
            let omega_k = realized
                .omega_x
                .add(&realized.omega_b.pullback(realized.grid).scale(k));
            omega_k_margins.push((k, omega_k.positivity_margin().0));
        }

        let (cb_mean, cb_deviation) =
            crate::fibration::fiber_constant_cb(&realized.chi, &realized.omega_x);
        let vb = crate::fibration::fiber_volume(&realized.omega_x);
        let vb_mean = vb.integrate();
        let vb_deviation = vb
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max((v.re - vb_mean).abs()));

        let passed = chi_margin > tol::POSITIVITY
            && omega_x_vertical_min > tol::POSITIVITY
            && omega_b_min > tol::POSITIVITY
            && omega_k_margins.iter().all(|(_, m)| *m > 0.0)
            && cb_deviation <= tol::CB_DEVIATION
            && vb_deviation <= 1e-11;
        Ok(ValidationReport {
            config_hash: self.hash(),
            chi_margin,
            omega_x_vertical_min,
            omega_b_min,
            omega_k_margins,
            cb_mean,
            cb_deviation,
            vb_deviation,
            passed,
        })
    }

    /// Flat product reference configuration: χ = diag(2,3),
    /// ω_X = i dw∧dw̄ (purely vertical), ω_B = i dz∧dz̄.
    pub fn flat() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            grid: GridConfig {
                n_fiber: 16,
                n_base: 16,
            },
            chi: KahlerData {
                constant: HermitianConst::diag(2.0, 3.0),
                potential: vec![],
            },
            omega_x: KahlerData {
                constant: HermitianConst::diag(1.0, 0.0),
                potential: vec![],
            },
            omega_b: BaseKahlerData {
                constant: 1.0,
                potential: vec![],
            },
            k_list: vec![16.0, 32.0, 64.0, 128.0],
            order: 2,
            tolerances: Tolerances::default(),
            output_dir: "out/flat".to_string(),
            seed: 7,
            threads: 0,
        }
    }

    /// The standard perturbed configuration: one mixed Fourier mode of
    /// amplitude δ on the χ-potential.
    pub fn perturbed(delta: f64) -> Self {
        let mut cfg = Self::flat();
        cfg.chi.potential = vec![FourierTerm {
            freq: [1, 0, 1, 0],
            amp: delta,
            phase: 0.0,
        }];
        cfg.output_dir = "out/perturbed".to_string();
        cfg.seed = 11;
        cfg
    }

    /// Perturbed configuration whose ω_X carries a genuine horizontal class
    /// (∫ω_X² > 0), giving the converse expansion a visible k⁻² tail.
    pub fn perturbed_horizontal(delta: f64) -> Self {
        let mut cfg = Self::perturbed(delta);
        cfg.omega_x.constant = HermitianConst::diag(1.0, 0.5);
        cfg.k_list = vec![64.0, 128.0, 256.0, 512.0, 1024.0];
        cfg.output_dir = "out/perturbed-horizontal".to_string();
        cfg.seed = 13;
        cfg
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
