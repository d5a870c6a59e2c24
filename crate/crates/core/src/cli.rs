//! Command-line front end: reads a [`RunConfig`], runs one mode, and writes
//! plain CSV/JSON artifacts plus a `summary.json` describing the run.
//!
//! Exit codes: 0 on success, 2 when a solver fails, 3 for bad input.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};

use crate::asymptotics::{boundary_layer, nonexistence_ratio, validate_far_field};
use crate::config::{Format, Mode, RunConfig};
use crate::equilibrium::{find_equilibrium, sweep_r, EquilibriumResult};
use crate::error::{Error, Result};
use crate::fpk::{self, StationaryMeasure};
use crate::grid::Grid;
use crate::hjb::{assert_qualitative, solve_hjb, HjbSolution, SHAPE_TOL};
use crate::model::ValidationMode;
use crate::sim::{compare, simulate, RNG_ALGORITHM};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Tolerance on the per-state mass check of a stationary measure.
pub const MASS_TOL: f64 = 1e-4;
/// Tolerance on the flux identity, relative to `max |s_1 g_1|`.
pub const FLUX_TOL: f64 = 1e-3;
/// Tolerance on the sup distance between the two measure constructions.
pub const CDF_TOL: f64 = 1e-3;
/// Tolerances of the Monte-Carlo comparison.
pub const KS_TOL: f64 = 0.02;
pub const BOUNDARY_MASS_TOL: f64 = 0.02;

const CONFIG_HELP: &str = "\
CONFIG FILE (TOML; unknown keys are errors)
  mode        = solve-hjb | solve-fpk | equilibrium | sweep-r | validate-asymptotics | simulate
  validation  = strict | permissive                  (default strict)
  r           = <rate>                               (optional; single-rate modes solve for r* without it)
  [model]       rho, gamma, psi, x_low, y = [y1, y2], lambda = [l1, l2]
  [production]  A, alpha, delta                      (default 0.95, 0.35, 0.1)
  [grid]        x_max, n, spacing = uniform | sqrt-boundary
  [solver]      tol, max_iter, damping, dt
  [equilibrium] coupling = aiyagari | huggett, bond_supply, r_lo, r_hi, tol_r,
                max_bisect, coarse_points, construction = closed-form | adjoint
  [sweep]       rates = [r1, r2, ...]
  [asymptotics] far_window = [lo, hi], far_tol, ratio_tol, slope_tol, exponent_tol,
                coeff_rel_tol, far_grid = { x_max, n, spacing }
  [simulation]  n_agents, t_end, dt, burn_in, seed, clock = per-step | exponential
  [output]      dir, format = csv | json

ARTIFACTS
  values.csv        x, v1, v2, c1, c2, s1, s2
  measure.csv       x, g1, g2, G1, G2, mu1, mu2, xhat
  equilibrium.json  r_star, K, N, residual, iterations, ...
  asymptotics.json  far-field, drift-ratio and boundary-layer reports
  sweep.csv         r, K_supply, K_demand, s2_at_xlow, xhat, mu1, error
  simulate.csv      agent_id, wealth, state (1 = low income, 2 = high)
  summary.json      parameters, derived constants, tolerances, invariant checks

EXIT CODES
  0 success, 2 solver failure, 3 configuration error";

#[derive(Debug, Parser)]
#[command(name = "ezmfg", version, about = "Stationary mean field games with Epstein-Zin utility", after_help = CONFIG_HELP)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the mode set in the config.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Enforce gamma * psi < 1 (the default unless the config says otherwise).
    #[arg(long, conflicts_with = "permissive")]
    pub strict: bool,
    /// Accept gamma * psi >= 1 with a warning.
    #[arg(long)]
    pub permissive: bool,
    /// Override the simulation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

/// Run one invocation. Errors go to stderr; `summary.json` is written
/// whenever an output directory is known.
pub fn run(cli: &Cli) -> i32 {
    let mut summary = Summary::default();
    let loaded = RunConfig::from_file(&cli.config).map(|mut cfg| {
        apply_overrides(&mut cfg, cli);
        cfg
    });
    let out_dir = match (&cli.out, &loaded) {
        (Some(dir), _) => dir.clone(),
        (None, Ok(cfg)) => cfg.output.dir.clone(),
        (None, Err(_)) => PathBuf::from("out"),
    };
    let result = loaded.and_then(|cfg| {
        summary.describe(&cfg);
        summary.warnings = cfg.validate()?;
        fs::create_dir_all(&out_dir)?;
        execute(&cfg, &out_dir, &mut summary)
    });
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) if e.is_config_error() => EXIT_CONFIG,
        Err(_) => EXIT_SOLVER,
    };
    summary.exit_code = code;
    summary.status = match code {
        EXIT_OK => "ok",
        EXIT_CONFIG => "config-error",
        _ => "solver-failure",
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
        summary.error = Some(e.to_string());
    }
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = fs::create_dir_all(&out_dir).map_err(Error::from).and_then(|_| summary.write(&out_dir)) {
        eprintln!("error: cannot write summary.json: {e}");
        if code == EXIT_OK {
            return EXIT_SOLVER;
        }
    }
    code
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if cli.strict {
        cfg.validation = ValidationMode::Strict;
    }
    if cli.permissive {
        cfg.validation = ValidationMode::Permissive;
    }
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Default, Serialize)]
pub struct Summary {
    pub mode: Option<&'static str>,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub params: Option<Value>,
    pub derived: Option<Value>,
    pub tolerances: BTreeMap<&'static str, f64>,
    /// Invariant name to pass/fail.
    pub invariants: BTreeMap<String, bool>,
    /// Measured values behind the invariant checks.
    pub diagnostics: BTreeMap<String, Value>,
    pub rng: Option<&'static str>,
    pub artifacts: Vec<String>,
}

impl Summary {
    fn describe(&mut self, cfg: &RunConfig) {
        self.mode = Some(cfg.mode.name());
        self.params = Some(json!({
            "model": cfg.model,
            "production": cfg.production,
            "validation": cfg.validation,
            "grid": cfg.grid,
            "solver": cfg.solver,
            "r": cfg.r,
        }));
        let d = cfg.model.derived();
        self.derived = Some(json!({
            "theta": finite_or_null(d.theta),
            "zeta": finite_or_null(d.zeta),
            "labor": finite_or_null(d.labor),
            "existence_condition": d.existence_condition,
        }));
        self.tolerances.insert("hjb_residual", cfg.solver.tol);
        self.tolerances.insert("shape", SHAPE_TOL);
        self.tolerances.insert("mass", MASS_TOL);
        self.tolerances.insert("flux", FLUX_TOL);
        self.tolerances.insert("cdf_cross_check", CDF_TOL);
        self.tolerances.insert("tol_r", cfg.equilibrium.tol_r);
        match cfg.mode {
            Mode::Simulate => {
                self.tolerances.insert("ks", KS_TOL);
                self.tolerances.insert("boundary_mass", BOUNDARY_MASS_TOL);
                self.rng = Some(RNG_ALGORITHM);
            }
            Mode::ValidateAsymptotics => {
                let a = &cfg.asymptotics;
                self.tolerances.insert("far_field", a.far_tol);
                self.tolerances.insert("drift_ratio", a.ratio_tol);
                self.tolerances.insert("ratio_slope", a.slope_tol);
                self.tolerances.insert("layer_exponent", a.exponent_tol);
                self.tolerances.insert("layer_coefficient", a.coeff_rel_tol);
            }
            _ => {}
        }
    }

    fn check(&mut self, name: impl Into<String>, pass: bool) {
        self.invariants.insert(name.into(), pass);
    }

    fn note(&mut self, name: impl Into<String>, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.diagnostics.insert(name.into(), v);
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("summary.json"), text + "\n")?;
        Ok(())
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn execute(cfg: &RunConfig, dir: &Path, summary: &mut Summary) -> Result<()> {
    let grid = cfg.grid.build(cfg.model.x_low)?;
    match cfg.mode {
        Mode::SolveHjb => {
            let r = rate(cfg, &grid, summary)?;
            let sol = solve_checked(cfg, r, &grid, summary)?;
            write_values(&sol, cfg.output.format, dir, summary)
        }
        Mode::SolveFpk => {
            let r = rate(cfg, &grid, summary)?;
            let sol = solve_checked(cfg, r, &grid, summary)?;
            let m = measure_checked(&sol, summary, true)?;
            write_values(&sol, cfg.output.format, dir, summary)?;
            write_measure(&m, cfg.output.format, dir, summary)
        }
        Mode::Equilibrium => {
            let eq = equilibrium(cfg, &grid, summary)?;
            write_json(dir, "equilibrium.json", &equilibrium_record(&eq), summary)?;
            let sol = solve_checked(cfg, eq.r_star, &grid, summary)?;
            let m = measure_checked(&sol, summary, false)?;
            write_values(&sol, cfg.output.format, dir, summary)?;
            write_measure(&m, cfg.output.format, dir, summary)
        }
        Mode::SweepR => {
            let rates = cfg.sweep.as_ref().map(|s| s.rates.clone()).unwrap_or_default();
            let rows = sweep_r(&cfg.model, &cfg.coupling()?, &rates, &grid, &cfg.solver, cfg.equilibrium.construction);
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            summary.check("sweep_all_rows_solved", failed == 0);
            let mut t = Table::new(&["r", "K_supply", "K_demand", "s2_at_xlow", "xhat", "mu1", "error"]);
            for row in rows {
                t.push(vec![
                    Field::Num(row.r),
                    row.capital_supply.into(),
                    Field::Num(row.capital_demand),
                    row.s2_at_xlow.into(),
                    row.x_hat.into(),
                    row.mu1.into(),
                    Field::Text(row.error.unwrap_or_default()),
                ]);
            }
            t.write(dir, "sweep", cfg.output.format, summary)
        }
        Mode::ValidateAsymptotics => {
            let a = &cfg.asymptotics;
            let far_grid = a.far_grid.build(cfg.model.x_low)?;
            let far = solve_hjb(&cfg.model, cfg.model.rho, &far_grid, &cfg.solver)?;
            summary.check("far_field_residual", far.residual < cfg.solver.tol);
            let ff = validate_far_field(&far, a.far_window, a.far_tol)?;
            let ratio = nonexistence_ratio(&far, a.far_window, a.ratio_tol, a.slope_tol)?;
            summary.check("far_field_second_order", ff.pass);
            summary.check("drift_ratio_asymptote", ratio.pass);
            // The last node cannot save upward past x_max, so it is excluded.
            let below_top = &far.s[1][..far.s[1].len() - 1];
            summary.check("high_income_saving_positive_at_rho", below_top.iter().all(|&s| s > 0.0));
            let r = rate(cfg, &grid, summary)?;
            let sol = solve_checked(cfg, r, &grid, summary)?;
            let layer = boundary_layer(&sol, a.exponent_tol, a.coeff_rel_tol)?;
            summary.check("boundary_layer_exponent", layer.exponent_ok);
            summary.check("boundary_layer_coefficient", layer.coeff_ok);
            summary.check("kappa_positive", layer.kappa_positive);
            let record = json!({
                "far_field": ff,
                "drift_ratio": ratio,
                "boundary_layer": { "r": r, "report": layer },
            });
            write_json(dir, "asymptotics.json", &record, summary)
        }
        Mode::Simulate => {
            let r = rate(cfg, &grid, summary)?;
            let sol = solve_checked(cfg, r, &grid, summary)?;
            let m = measure_checked(&sol, summary, false)?;
            let emp = simulate(&sol, &cfg.simulation)?;
            let cmp = compare(&emp, &m);
            summary.check("ks_state1", cmp.ks[0] < KS_TOL);
            summary.check("ks_state2", cmp.ks[1] < KS_TOL);
            summary.check("boundary_mass_state1", cmp.boundary_gap[0] < BOUNDARY_MASS_TOL);
            summary.check("wealth_above_borrowing_limit", emp.samples.iter().all(|s| s.wealth >= emp.x_low));
            summary.note("simulation", &cmp);
            let mut t = Table::new(&["agent_id", "wealth", "state"]);
            for s in &emp.samples {
                t.push(vec![Field::Int(s.agent_id as u64), Field::Num(s.wealth), Field::Int(s.state as u64 + 1)]);
            }
            t.write(dir, "simulate", cfg.output.format, summary)
        }
    }
}

/// The configured rate, or the equilibrium rate when none is given.
fn rate(cfg: &RunConfig, grid: &Grid, summary: &mut Summary) -> Result<f64> {
    match cfg.r {
        Some(r) => Ok(r),
        None => Ok(equilibrium(cfg, grid, summary)?.r_star),
    }
}

fn equilibrium(cfg: &RunConfig, grid: &Grid, summary: &mut Summary) -> Result<EquilibriumResult> {
    let eq = find_equilibrium(&cfg.model, &cfg.coupling()?, grid, &cfg.solver, &cfg.equilibrium.solver())?;
    summary.warnings.extend(eq.warnings.iter().cloned());
    if let Some(gap) = eq.fixed_point_gap {
        summary.check("equilibrium_fixed_point", gap.abs() < 10.0 * cfg.equilibrium.tol_r);
    }
    summary.check("equilibrium_rate_in_range", eq.r_star > 0.0 && eq.r_star < cfg.model.rho);
    summary.note("equilibrium", equilibrium_record(&eq));
    Ok(eq)
}

fn equilibrium_record(eq: &EquilibriumResult) -> Value {
    json!({
        "r_star": eq.r_star,
        "K": eq.capital,
        "N": eq.labor,
        "K_demand": eq.capital_demand,
        "residual": eq.residual,
        "iterations": eq.iterations,
        "fixed_point_gap": eq.fixed_point_gap,
        "brackets": eq.brackets,
        "warnings": eq.warnings,
    })
}

fn solve_checked(cfg: &RunConfig, r: f64, grid: &Grid, summary: &mut Summary) -> Result<HjbSolution> {
    let sol = solve_hjb(&cfg.model, r, grid, &cfg.solver)?;
    let q = assert_qualitative(&sol, cfg.solver.tol);
    summary.check("hjb_residual", q.residual_ok);
    summary.check("value_concave", q.concave);
    summary.check("value_within_envelope", q.within_envelope);
    summary.check("value_high_above_low", q.ordered);
    summary.check("low_income_saving_zero_at_limit", q.s1_zero_at_boundary);
    summary.check("low_income_saving_negative", q.s1_negative_interior);
    summary.check("consumption_positive", q.consumption_positive);
    summary.check("top_boundary_not_binding", q.top_boundary_ok);
    if let Some(gap) = q.marginal_value_gap {
        summary.check("boundary_marginal_value_gap", gap);
    }
    if let Some(change) = q.s2_sign_change {
        summary.check("high_income_saving_changes_sign", change);
    }
    summary.note("hjb", json!({ "r": r, "residual": sol.residual, "iterations": sol.iterations }));
    Ok(sol)
}

fn measure_checked(sol: &HjbSolution, summary: &mut Summary, cross_check: bool) -> Result<StationaryMeasure> {
    let m = fpk::closed_form(sol)?;
    let p = &sol.params;
    let mass_err = (0..2).map(|j| (m.state_mass(j) - p.state_mass(j)).abs()).fold(0.0, f64::max);
    summary.check("state_masses", mass_err < MASS_TOL);
    let flux = m.flux_defect(sol);
    summary.check("flux_identity", flux < FLUX_TOL);
    summary.check("densities_nonnegative", m.g.iter().flatten().all(|&g| g >= 0.0) && m.mu.iter().all(|&u| u >= 0.0));
    let mut diag = json!({ "mass_error": mass_err, "flux_defect": flux, "x_hat": m.x_hat, "mu": m.mu, "K": m.capital() });
    if cross_check {
        let adj = fpk::adjoint(sol)?;
        let d = m.cdf_distance(&adj);
        summary.check("cdf_cross_check", d < CDF_TOL);
        diag["cdf_distance_closed_form_vs_adjoint"] = json!(d);
    }
    summary.note("measure", diag);
    Ok(m)
}

fn write_values(sol: &HjbSolution, format: Format, dir: &Path, summary: &mut Summary) -> Result<()> {
    let mut t = Table::new(&["x", "v1", "v2", "c1", "c2", "s1", "s2"]);
    for (i, &x) in sol.grid.nodes.iter().enumerate() {
        t.push(
            [x, sol.v[0][i], sol.v[1][i], sol.c[0][i], sol.c[1][i], sol.s[0][i], sol.s[1][i]]
                .into_iter()
                .map(Field::Num)
                .collect(),
        );
    }
    t.write(dir, "values", format, summary)
}

fn write_measure(m: &StationaryMeasure, format: Format, dir: &Path, summary: &mut Summary) -> Result<()> {
    let mut t = Table::new(&["x", "g1", "g2", "G1", "G2", "mu1", "mu2", "xhat"]);
    let cdf = [m.cdf(0), m.cdf(1)];
    for (i, &x) in m.grid.nodes.iter().enumerate() {
        t.push(
            [x, m.g[0][i], m.g[1][i], cdf[0][i], cdf[1][i], m.mu[0], m.mu[1], m.x_hat]
                .into_iter()
                .map(Field::Num)
                .collect(),
        );
    }
    t.write(dir, "measure", format, summary)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize, summary: &mut Summary) -> Result<()> {
    let v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(path) = non_finite_path(&v, String::new()) {
        return Err(Error::DomainError(format!("non-finite value at `{path}` in {name}")));
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    summary.artifacts.push(name.to_string());
    Ok(())
}

/// serde_json writes non-finite floats as `null`; an unexpected `null`
/// leaf therefore marks a NaN or infinity in the source record. Fields that
/// are legitimately optional are skipped by name.
fn non_finite_path(v: &Value, path: String) -> Option<String> {
    const OPTIONAL: [&str; 3] = ["fixed_point_gap", "control_exponent", "r_hi"];
    match v {
        Value::Null if !OPTIONAL.iter().any(|k| path.ends_with(k)) => Some(path),
        Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| non_finite_path(x, format!("{path}[{i}]"))),
        Value::Object(o) => o.iter().find_map(|(k, x)| non_finite_path(x, format!("{path}.{k}"))),
        _ => None,
    }
}

/// One cell of a tabular artifact.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl From<Option<f64>> for Field {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Field::Empty, Field::Num)
    }
}

impl Field {
    fn csv(&self) -> String {
        match self {
            Field::Num(x) => format!("{x:.16e}"),
            Field::Int(n) => n.to_string(),
            Field::Text(s) => s.clone(),
            Field::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Field::Num(x) => json!(x),
            Field::Int(n) => json!(n),
            Field::Text(s) if s.is_empty() => Value::Null,
            Field::Text(s) => json!(s),
            Field::Empty => Value::Null,
        }
    }
}

/// Column-named rows, written as CSV or as a JSON array of row objects.
#[derive(Debug, Clone)]
pub struct Table {
    headers: Vec<&'static str>,
    rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Table { headers: headers.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Write `<stem>.csv` or `<stem>.json`. A NaN or infinity anywhere is an
    /// error and nothing is written.
    pub fn write(&self, dir: &Path, stem: &str, format: Format, summary: &mut Summary) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for (h, f) in self.headers.iter().zip(row) {
                if let Field::Num(x) = f {
                    if !x.is_finite() {
                        return Err(Error::DomainError(format!("non-finite {h} = {x} in row {i} of {stem}")));
                    }
                }
            }
        }
        let name = match format {
            Format::Csv => format!("{stem}.csv"),
            Format::Json => format!("{stem}.json"),
        };
        let path = dir.join(&name);
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
                w.write_record(&self.headers).map_err(csv_error)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Field::csv)).map_err(csv_error)?;
                }
                w.flush()?;
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(self.headers.iter().zip(row).map(|(h, f)| (h.to_string(), f.json())).collect())
                    })
                    .collect();
                let text = serde_json::to_string(&rows).map_err(|e| Error::Config(e.to_string()))?;
                fs::write(&path, text + "\n")?;
            }
        }
        summary.artifacts.push(name);
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
