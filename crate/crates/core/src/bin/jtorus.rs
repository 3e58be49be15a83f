//! Experiment driver: configuration ingestion, pipeline orchestration,
//! field caching, and report/plot-data emission.
//!
//! Every command is deterministic given the config file and seed; reports
//! embed the config hash, and CSV outputs are byte-stable across reruns.
//! Exit codes: 0 success, 1 configuration error, 2 solver failure (the
//! report is still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use jtorus::adiabatic::{expand, prepare, residual_order_study, ExpansionState, Prepared};
use jtorus::cache;
use jtorus::config::ExperimentConfig;
use jtorus::error::{Error, Result};
use jtorus::jlinear::SolverOptions;
use jtorus::jnef::{converse_audit, converse_expansion_check, slope_audit};
use jtorus::newton::{ift_diagnostics, newton_solve, GmresOptions, NewtonOptions};

#[derive(Parser)]
#[command(
    name = "jtorus",
    about = "Solve the J-equation on model torus fibrations by adiabatic expansion and Newton completion",
    version
)]
struct Cli {
    /// Experiment config JSON file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration: flat | perturbed | perturbed-horizontal.
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for the fiberwise solves; 0 = all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Positivity, closedness witnesses (c_b, V_b), and band-limit checks.
    Validate,
    /// Fiberwise normalization of ω_X and the base solve; caches the fields.
    Normalize,
    /// Build the order-r approximate solution and cache it.
    Expand {
        /// Expansion order; defaults to the config's.
        #[arg(long)]
        order: Option<usize>,
    },
    /// Newton-complete ω_{k,r} to a genuine solution at fixed k.
    Solve {
        #[arg(long)]
        k: f64,
        /// Start from this expansion order; defaults to the config's.
        #[arg(long)]
        order: Option<usize>,
    },
    /// Residual order study: per-(r, k) residual norms and fitted slopes.
    Study {
        /// Orders to study, e.g. 0,1,2; defaults to 0..=config order.
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<usize>>,
        /// k values; defaults to the config's k_list.
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
    },
    /// Slope audits along ω_k and the converse expansion check.
    Jnef {
        #[arg(long = "k-list", value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
    },
    /// Print a built-in config as JSON (a starting point for experiments).
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.builtin) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => builtin(name)?,
        (None, None) => {
            return Err(Error::Config(
                "pass either --config <file> or --builtin <name>".to_string(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--config and --builtin are mutually exclusive".to_string(),
            ))
        }
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.display().to_string();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn builtin(name: &str) -> Result<ExperimentConfig> {
    match name {
        "flat" => Ok(ExperimentConfig::flat()),
        "perturbed" => Ok(ExperimentConfig::perturbed(0.05)),
        "perturbed-horizontal" => Ok(ExperimentConfig::perturbed_horizontal(0.05)),
        other => Err(Error::Config(format!(
            "unknown builtin {other:?}; expected flat | perturbed | perturbed-horizontal"
        ))),
    }
}

fn prepare_geometry(cfg: &ExperimentConfig) -> Result<Prepared> {
    let realized = cfg.realize()?;
    prepare(&realized.chi, &realized.omega_x, &realized.omega_b)
}

/// Load the cached expansion state for this config+order, or build and
/// cache it.
fn obtain_state(cfg: &ExperimentConfig, order: usize) -> Result<ExpansionState> {
    let out = PathBuf::from(&cfg.output_dir);
    let state_dir = cache::cache_dir(&out)
        .join(cfg.hash())
        .join(format!("state_r{order}"));
    if state_dir.join("manifest.json").exists() {
        if let Ok(state) = cache::load_state(&state_dir, &cfg.hash()) {
            eprintln!("loaded cached expansion from {}", state_dir.display());
            return Ok(state);
        }
    }
    let prep = prepare_geometry(cfg)?;
    let opts = SolverOptions {
        residual_tol: cfg.tolerances.solver_residual,
        ..SolverOptions::for_grid(prep.chi.grid)
    };
    let state = expand(&prep, order, opts)?;
    cache::save_state(&state_dir, &cfg.hash(), &state)?;
    Ok(state)
}

#[derive(Serialize)]
struct NormalizeReport {
    config_hash: String,
    c_b: f64,
    c_base: f64,
    normalization_residual: f64,
    base_equation_deviation: f64,
    omega_b_min: f64,
    chi_b_min: f64,
}

#[derive(Serialize)]
struct ExpandReport {
    config_hash: String,
    order: usize,
    constants: Vec<f64>,
    k_min: f64,
    max_vert_pot_fiber_mean: f64,
}

#[derive(Serialize)]
struct StudyReportFile {
    config_hash: String,
    orders: Vec<usize>,
    k_list: Vec<f64>,
    slopes_sup: Vec<(usize, f64)>,
    slopes_l2: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct SolveReportFile {
    config_hash: String,
    k: f64,
    order: usize,
    converged: bool,
    iterations: usize,
    final_residual_sup: f64,
    residual_sup_history: Vec<f64>,
    residual_l2_history: Vec<f64>,
    final_positivity_margin: f64,
    tail_ratios: Vec<f64>,
    inverse_norm: f64,
    smallest_rayleigh: f64,
    ift_delta: f64,
    ift_delta_prime: f64,
    solution_audit: jtorus::jnef::SlopeLedger,
}

#[derive(Serialize)]
struct JnefReportFile {
    config_hash: String,
    k_list: Vec<f64>,
    audit: jtorus::jnef::ConverseAudit,
    expansion: jtorus::jnef::ConverseReport,
    c1: f64,
}

fn run(cli: &Cli) -> Result<i32> {
    if matches!(cli.command, Command::PrintConfig) {
        let name = cli.builtin.clone().unwrap_or_else(|| "perturbed".into());
        println!("{}", builtin(&name)?.to_json());
        return Ok(0);
    }

    let cfg = load_config(cli)?;
    if cfg.threads > 0 {
        // ignore failure: the global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    let out = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out)?;
    let hash = cfg.hash();

    match &cli.command {
        Command::PrintConfig => unreachable!(),
        Command::Validate => {
            let report = cfg.validate()?;
            cache::write_json(&out.join("validate_report.json"), &report)?;
            eprintln!(
                "validate: chi margin {:.3e}, vertical min {:.3e}, c_b {:.12} (dev {:.3e})",
                report.chi_margin, report.omega_x_vertical_min, report.cb_mean, report.cb_deviation
            );
            if report.passed {
                println!("validate: PASS");
                Ok(0)
            } else {
                println!("validate: FAIL (see validate_report.json)");
                Ok(1)
            }
        }
        Command::Normalize => {
            let prep = prepare_geometry(&cfg)?;
            let cb_field = jtorus::fibration::fiber_mean(&prep.chi.ww)
                .div(&jtorus::fibration::fiber_mean(&prep.omega_x.ww));
            let normalization_residual = prep
                .omega_x
                .ww
                .sub(&prep.chi.ww.div(&cb_field.lift()))
                .sup_norm();
            let ratio = prep.chi_b.coeff.div(&prep.omega_b.coeff);
            let base_equation_deviation = ratio.add_scalar(-prep.c_base).sup_norm();
            let dir = cache::cache_dir(&out).join(&hash).join("normalized");
            cache::save_form(&dir, "omega_x", &prep.omega_x)?;
            cache::save_base(&dir.join("omega_b"), &prep.omega_b.coeff)?;
            let report = NormalizeReport {
                config_hash: hash,
                c_b: prep.c_b,
                c_base: prep.c_base,
                normalization_residual,
                base_equation_deviation,
                omega_b_min: prep.omega_b.positivity_margin(),
                chi_b_min: prep.chi_b.positivity_margin(),
            };
            cache::write_json(&out.join("normalize_report.json"), &report)?;
            println!(
                "normalize: c_b = {:.12}, c_base = {:.12}, residual {:.3e}",
                report.c_b, report.c_base, report.normalization_residual
            );
            Ok(0)
        }
        Command::Expand { order } => {
            let order = order.unwrap_or(cfg.order);
            let state = obtain_state(&cfg, order)?;
            let summary = state.summary();
            let report = ExpandReport {
                config_hash: hash,
                order,
                constants: summary.constants.clone(),
                k_min: summary.k_min,
                max_vert_pot_fiber_mean: summary.max_vert_pot_fiber_mean,
            };
            cache::write_json(&out.join("expand_report.json"), &report)?;
            println!(
                "expand: order {}, constants {:?}, k_min {}",
                order, report.constants, report.k_min
            );
            Ok(0)
        }
        Command::Solve { k, order } => {
            let order = order.unwrap_or(cfg.order);
            let state = obtain_state(&cfg, order)?;
            let init = state.realize(*k)?;
            let opts = NewtonOptions {
                residual_tol: cfg.tolerances.newton_residual,
                ..NewtonOptions::default()
            };
            let (omega, report) = newton_solve(&init, &state.chi, opts)?;
            eprintln!(
                "solve: {} iterations in {:.2}s",
                report.iterations, report.wall_time_s
            );

            let dir = cache::cache_dir(&out).join(&hash).join(format!("solved_k{k}"));
            cache::save_form(&dir, "omega", &omega)?;
            let history_rows: Vec<Vec<String>> = report
                .residual_sup_history
                .iter()
                .zip(&report.residual_l2_history)
                .enumerate()
                .map(|(i, (s, l))| vec![i.to_string(), format!("{s}"), format!("{l}")])
                .collect();
            cache::write_csv(
                &out.join("solve_history.csv"),
                &["iteration", "residual_sup", "residual_l2"],
                &history_rows,
            )?;

            let diag = ift_diagnostics(&omega, &state.chi, GmresOptions::default())?;
            let audit = slope_audit(&state.chi, &omega)?;
            let file = SolveReportFile {
                config_hash: hash,
                k: *k,
                order,
                converged: report.converged,
                iterations: report.iterations,
                final_residual_sup: *report.residual_sup_history.last().unwrap(),
                residual_sup_history: report.residual_sup_history.clone(),
                residual_l2_history: report.residual_l2_history.clone(),
                final_positivity_margin: report.final_positivity_margin,
                tail_ratios: report.tail_ratios.clone(),
                inverse_norm: diag.inverse_norm,
                smallest_rayleigh: diag.smallest_rayleigh,
                ift_delta: diag.delta,
                ift_delta_prime: diag.delta_prime,
                solution_audit: audit,
            };
            cache::write_json(&out.join("solve_report.json"), &file)?;
            if report.converged {
                println!(
                    "solve: converged, residual {:.3e} after {} iterations",
                    file.final_residual_sup, file.iterations
                );
                Ok(0)
            } else {
                println!(
                    "solve: FAILED to reach {:.1e} (residual {:.3e}); report written",
                    cfg.tolerances.newton_residual, file.final_residual_sup
                );
                Ok(2)
            }
        }
        Command::Study { orders, k_list } => {
            let orders = orders.clone().unwrap_or_else(|| (0..=cfg.order).collect());
            let k_list = k_list.clone().unwrap_or_else(|| cfg.k_list.clone());
            let max_order = orders.iter().copied().max().unwrap_or(cfg.order);
            let state = obtain_state(&cfg, max_order)?;

            let mut rows: Vec<Vec<String>> = Vec::new();
            let mut slopes_sup = Vec::new();
            let mut slopes_l2 = Vec::new();
            for &r in &orders {
                let study = residual_order_study(&state.truncate(r), &k_list)?;
                for row in &study.rows {
                    rows.push(vec![
                        format!("{}", row.k),
                        r.to_string(),
                        format!("{}", row.residual_sup),
                        format!("{}", row.residual_l2),
                        format!("{}", study.slope_sup),
                    ]);
                }
                slopes_sup.push((r, study.slope_sup));
                slopes_l2.push((r, study.slope_l2));
                eprintln!("study: order {r}: sup slope {:.3}", study.slope_sup);
            }
            cache::write_csv(
                &out.join("study.csv"),
                &["k", "r", "residual_sup", "residual_l2", "slope_fit"],
                &rows,
            )?;
            let report = StudyReportFile {
                config_hash: hash,
                orders,
                k_list,
                slopes_sup,
                slopes_l2,
            };
            cache::write_json(&out.join("study_report.json"), &report)?;
            println!("study: slopes {:?}", report.slopes_sup);
            Ok(0)
        }
        Command::Jnef { k_list } => {
            let audit_ks = k_list.clone().unwrap_or_else(|| cfg.k_list.clone());
            let prep = prepare_geometry(&cfg)?;
            let audit = converse_audit(&prep.chi, &prep.omega_x, &prep.omega_b, &audit_ks)?;
            // the quartic expansion fit needs ≥ 5 geometric samples
            let fit_ks: Vec<f64> = if audit_ks.len() >= 5 {
                audit_ks.clone()
            } else {
                let k0 = audit_ks.iter().copied().fold(f64::MIN, f64::max).max(64.0);
                (0..5).map(|i| k0 * f64::powi(2.0, i)).collect()
            };
            let expansion =
                converse_expansion_check(&prep.chi, &prep.omega_x, &prep.omega_b, &fit_ks)?;
            let c1 = expansion.c1;

            let mut rows: Vec<Vec<String>> = Vec::new();
            for (k, ledger) in &audit.per_k {
                for e in &ledger.entries {
                    rows.push(vec![
                        format!("{k}"),
                        e.name.clone(),
                        e.dimension.to_string(),
                        format!("{}", e.numerator),
                        format!("{}", e.denominator),
                        format!("{}", e.slope),
                        format!("{}", e.margin),
                        format!("{:?}", e.verdict),
                    ]);
                }
            }
            cache::write_csv(
                &out.join("jnef_slopes.csv"),
                &[
                    "k",
                    "subvariety",
                    "dimension",
                    "numerator",
                    "denominator",
                    "slope",
                    "margin",
                    "verdict",
                ],
                &rows,
            )?;
            let all_nef = audit.all_total_jnef;
            let report = JnefReportFile {
                config_hash: hash,
                k_list: audit_ks,
                audit,
                expansion,
                c1,
            };
            cache::write_json(&out.join("jnef_report.json"), &report)?;
            println!(
                "jnef: total-space J-nef along list: {}; C1 = {:.3e}; a1 − base slope = {:.3e}",
                all_nef,
                c1,
                report.expansion.coefficients[1] - report.expansion.base_slope
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e @ Error::Config(_)) | Err(e @ Error::Json(_)) | Err(e @ Error::Io(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("solver error: {e}");
            ExitCode::from(2)
        }
    }
}
