//! Field persistence for the CLI cache, plus report writers.
//!
//! A field is stored as a flat binary block of little-endian 64-bit floats
//! (complex samples interleaved re, im; row-major in the index order
//! (y₁, y₂, x₁, x₂)) next to a JSON header carrying the grid shape. An
//! expansion state is a JSON manifest plus one block per potential.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adiabatic::ExpansionState;
use crate::error::{Error, Result};
use crate::fibration::BaseForm;
use crate::field::{BaseField, Grid4, ScalarField};
use crate::forms::FormField;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct BlockHeader {
    schema: u32,
    kind: String,
    n_fiber: usize,
    n_base: usize,
    layout: String,
    dtype: String,
    samples: usize,
}

impl BlockHeader {
    fn new(kind: &str, grid: Grid4, samples: usize) -> Self {
        BlockHeader {
            schema: 1,
            kind: kind.to_string(),
            n_fiber: grid.n_fiber,
            n_base: grid.n_base,
            layout: "row-major (y1,y2,x1,x2)".to_string(),
            dtype: "c128le interleaved re,im".to_string(),
            samples,
        }
    }

    fn grid(&self) -> Result<Grid4> {
        Grid4::new(self.n_fiber, self.n_base)
    }
}

fn write_block(path: &Path, header: &BlockHeader, samples: &[Complex64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut json_path = path.to_path_buf();
    json_path.set_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(header)?)?;

    let mut bin_path = path.to_path_buf();
    bin_path.set_extension("bin");
    let mut bytes = Vec::with_capacity(samples.len() * 16);
    for v in samples {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    let mut f = fs::File::create(&bin_path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_block(path: &Path, expect_kind: &str) -> Result<(BlockHeader, Vec<Complex64>)> {
    let mut json_path = path.to_path_buf();
    json_path.set_extension("json");
    let header: BlockHeader = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
    if header.kind != expect_kind {
        return Err(Error::Config(format!(
            "block {} has kind {:?}, expected {:?}",
            path.display(),
            header.kind,
            expect_kind
        )));
    }
    let mut bin_path = path.to_path_buf();
    bin_path.set_extension("bin");
    let mut bytes = Vec::new();
    fs::File::open(&bin_path)?.read_to_end(&mut bytes)?;
    if bytes.len() != header.samples * 16 {
        return Err(Error::Config(format!(
            "block {} has {} bytes, expected {}",
            bin_path.display(),
            bytes.len(),
            header.samples * 16
        )));
    }
    let samples = bytes
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    Ok((header, samples))
}

pub fn save_scalar(path: &Path, field: &ScalarField) -> Result<()> {
    let samples = field.values.as_slice().expect("contiguous");
    write_block(
        path,
        &BlockHeader::new("scalar", field.grid, samples.len()),
        samples,
    )
}

pub fn load_scalar(path: &Path) -> Result<ScalarField> {
    let (header, samples) = read_block(path, "scalar")?;
    let grid = header.grid()?;
    let values = Array4::from_shape_vec(grid.shape(), samples)
        .map_err(|e| Error::Config(format!("bad scalar block shape: {e}")))?;
    Ok(ScalarField { grid, values })
}

pub fn save_base(path: &Path, field: &BaseField) -> Result<()> {
    let samples = field.values.as_slice().expect("contiguous");
    write_block(
        path,
        &BlockHeader::new("base", field.grid, samples.len()),
        samples,
    )
}

pub fn load_base(path: &Path) -> Result<BaseField> {
    let (header, samples) = read_block(path, "base")?;
    let grid = header.grid()?;
    let values = Array2::from_shape_vec((grid.n_base, grid.n_base), samples)
        .map_err(|e| Error::Config(format!("bad base block shape: {e}")))?;
    Ok(BaseField { grid, values })
}

pub fn save_form(dir: &Path, name: &str, form: &FormField) -> Result<()> {
    save_scalar(&dir.join(format!("{name}_ww")), &form.ww)?;
    save_scalar(&dir.join(format!("{name}_wz")), &form.wz)?;
    save_scalar(&dir.join(format!("{name}_zz")), &form.zz)?;
    Ok(())
}

pub fn load_form(dir: &Path, name: &str, closed_by_construction: bool) -> Result<FormField> {
    let ww = load_scalar(&dir.join(format!("{name}_ww")))?;
    let wz = load_scalar(&dir.join(format!("{name}_wz")))?;
    let zz = load_scalar(&dir.join(format!("{name}_zz")))?;
    Ok(FormField {
        grid: ww.grid,
        ww,
        wz,
        zz,
        closed_by_construction,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StateManifest {
    schema: u32,
    config_hash: String,
    order: usize,
    constants: Vec<f64>,
    k_min: f64,
    n_base_pots: usize,
    n_vert_pots: usize,
}

/// Persist an expansion state as manifest + binary blocks under `dir`.
pub fn save_state(dir: &Path, config_hash: &str, state: &ExpansionState) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = StateManifest {
        schema: 1,
        config_hash: config_hash.to_string(),
        order: state.order,
        constants: state.constants.clone(),
        k_min: state.k_min,
        n_base_pots: state.base_pots.len(),
        n_vert_pots: state.vert_pots.len(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    save_form(dir, "chi", &state.chi)?;
    save_form(dir, "omega_x", &state.omega_x)?;
    save_base(&dir.join("omega_b"), &state.omega_b.coeff)?;
    for (j, p) in state.base_pots.iter().enumerate() {
        save_base(&dir.join(format!("base_pot_{j}")), p)?;
    }
    for (j, p) in state.vert_pots.iter().enumerate() {
        save_scalar(&dir.join(format!("vert_pot_{j}")), p)?;
    }
    Ok(())
}

/// Load a state saved by [`save_state`], verifying the config hash.
pub fn load_state(dir: &Path, config_hash: &str) -> Result<ExpansionState> {
    let manifest: StateManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.config_hash != config_hash {
        return Err(Error::Config(format!(
            "cached state at {} was produced by a different config",
            dir.display()
        )));
    }
    let chi = load_form(dir, "chi", true)?;
    let omega_x = load_form(dir, "omega_x", true)?;
    let omega_b = BaseForm {
        coeff: load_base(&dir.join("omega_b"))?,
    };
    let mut base_pots = Vec::new();
    for j in 0..manifest.n_base_pots {
        base_pots.push(load_base(&dir.join(format!("base_pot_{j}")))?);
    }
    let mut vert_pots = Vec::new();
    for j in 0..manifest.n_vert_pots {
        vert_pots.push(load_scalar(&dir.join(format!("vert_pot_{j}")))?);
    }
    Ok(ExpansionState {
        chi,
        omega_x,
        omega_b,
        order: manifest.order,
        base_pots,
        vert_pots,
        constants: manifest.constants,
        k_min: manifest.k_min,
    })
}

/// Cache root: `ADIABATIC_CACHE_DIR` if set, else `<output_dir>/cache`.
pub fn cache_dir(output_dir: &Path) -> PathBuf {
    match std::env::var_os("ADIABATIC_CACHE_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => output_dir.join("cache"),
    }
}

/// Write a CSV file with deterministic float formatting (shortest
/// round-trip representation).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a pretty JSON report (field order fixed by the struct definition).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
