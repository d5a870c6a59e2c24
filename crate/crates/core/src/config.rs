//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::asymptotics::MAX_EXPANSION_PARAMETER;
use crate::equilibrium::{Coupling, EquilibriumConfig};
use crate::error::{Error, Result};
use crate::fpk::Construction;
use crate::grid::{Grid, Spacing};
use crate::hjb::HjbConfig;
use crate::model::{ModelParams, ProductionParams, ValidationMode};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveHjb,
    SolveFpk,
    Equilibrium,
    SweepR,
    ValidateAsymptotics,
    Simulate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveHjb => "solve-hjb",
            Mode::SolveFpk => "solve-fpk",
            Mode::Equilibrium => "equilibrium",
            Mode::SweepR => "sweep-r",
            Mode::ValidateAsymptotics => "validate-asymptotics",
            Mode::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    /// Number of cells; the grid has `n + 1` nodes.
    pub n: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridConfig {
    pub fn build(&self, x_low: f64) -> Result<Grid> {
        Grid::new(x_low, self.x_max, self.n, self.spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    #[default]
    Aiyagari,
    Huggett,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSection {
    pub coupling: CouplingKind,
    /// Bond supply `B`, required for the Huggett coupling.
    pub bond_supply: Option<f64>,
    pub r_lo: f64,
    pub r_hi: Option<f64>,
    pub tol_r: f64,
    pub max_bisect: usize,
    pub coarse_points: usize,
    pub construction: Construction,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        let d = EquilibriumConfig::default();
        EquilibriumSection {
            coupling: CouplingKind::Aiyagari,
            bond_supply: None,
            r_lo: d.r_lo,
            r_hi: d.r_hi,
            tol_r: d.tol_r,
            max_bisect: d.max_bisect,
            coarse_points: d.coarse_points,
            construction: d.construction,
        }
    }
}

impl EquilibriumSection {
    pub fn solver(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            r_lo: self.r_lo,
            r_hi: self.r_hi,
            tol_r: self.tol_r,
            max_bisect: self.max_bisect,
            coarse_points: self.coarse_points,
            construction: self.construction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub rates: Vec<f64>,
}

/// Settings of the asymptotic checks. The far field is solved at `r = rho`
/// on its own large grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticsSection {
    pub far_grid: GridConfig,
    pub far_window: (f64, f64),
    pub far_tol: f64,
    pub ratio_tol: f64,
    pub slope_tol: f64,
    pub exponent_tol: f64,
    pub coeff_rel_tol: f64,
}

impl Default for AsymptoticsSection {
    fn default() -> Self {
        AsymptoticsSection {
            far_grid: GridConfig { x_max: 200.0, n: 40_000, spacing: Spacing::Uniform },
            far_window: (50.0, 180.0),
            far_tol: 0.10,
            ratio_tol: 0.15,
            slope_tol: 0.10,
            exponent_tol: 0.05,
            coeff_rel_tol: 0.20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), format: Format::Csv }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A complete run. `r` fixes the interest rate for the single-rate modes;
/// when it is absent those modes first solve for the equilibrium rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub validation: ValidationMode,
    pub model: ModelParams,
    #[serde(default)]
    pub production: ProductionParams,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: HjbConfig,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub equilibrium: EquilibriumSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub asymptotics: AsymptoticsSection,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Validate the model and every section the mode uses. Returns the
    /// warnings produced by permissive validation.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.model.validate(self.validation)?;
        self.grid.build(self.model.x_low)?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.max_iter > 0 && s.damping > 0.0 && s.damping <= 1.0 && s.dt > 0.0) {
            return Err(Error::Config(
                "solver needs tol > 0, max_iter > 0, 0 < damping <= 1 and dt > 0".into(),
            ));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r <= self.model.rho) {
                return Err(Error::Config(format!("r = {r} must lie in (0, rho]")));
            }
        }
        let p = &self.production;
        if !(p.a > 0.0 && p.alpha > 0.0 && p.alpha < 1.0 && p.delta >= 0.0) {
            return Err(Error::Config("production needs A > 0, 0 < alpha < 1 and delta >= 0".into()));
        }
        let coupling = self.coupling()?;
        coupling.validate(&self.model)?;
        match self.mode {
            Mode::SweepR => {
                let rates = self.sweep.as_ref().map(|s| s.rates.as_slice()).unwrap_or(&[]);
                if rates.is_empty() {
                    return Err(Error::Config("sweep-r needs a non-empty [sweep] rates list".into()));
                }
                if let Some(r) = rates.iter().find(|&&r| !(r > 0.0 && r < self.model.rho)) {
                    return Err(Error::Config(format!("sweep rate {r} must lie in (0, rho)")));
                }
            }
            Mode::Simulate => self.simulation.validate(self.model.lambda)?,
            Mode::ValidateAsymptotics => {
                let a = &self.asymptotics;
                a.far_grid.build(self.model.x_low)?;
                let (lo, hi) = a.far_window;
                let param = (self.model.y[1] - self.model.y[0]) / (self.model.rho * lo + self.model.y[0]);
                if !(lo < hi && hi <= a.far_grid.x_max && param > 0.0 && param <= MAX_EXPANSION_PARAMETER) {
                    return Err(Error::Config(format!(
                        "far_window [{lo}, {hi}] must be non-empty, inside the far grid, and start where \
                         (y2 - y1) / (rho x + y1) <= {MAX_EXPANSION_PARAMETER}"
                    )));
                }
            }
            _ => {}
        }
        Ok(warnings)
    }

    pub fn coupling(&self) -> Result<Coupling> {
        match self.equilibrium.coupling {
            CouplingKind::Aiyagari => Ok(Coupling::Aiyagari(self.production)),
            CouplingKind::Huggett => match self.equilibrium.bond_supply {
                Some(b) => Ok(Coupling::Huggett { bond_supply: b }),
                None => Err(Error::Config("the huggett coupling needs equilibrium.bond_supply".into())),
            },
        }
    }
}
