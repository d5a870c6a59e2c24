//! Capital supply `K(r)` and the market-clearing interest rate.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpk::{self, Construction, StationaryMeasure};
use crate::grid::Grid;
use crate::hjb::{classify_boundary, solve_hjb, BoundaryClass, HjbConfig, HjbSolution};
use crate::model::{capital_demand, marginal_product_rate, ModelParams, ProductionParams};

/// Market-clearing condition closing the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Coupling {
    /// Household wealth equals firm capital demand.
    Aiyagari(ProductionParams),
    /// Household wealth equals an exogenous bond supply `B > x_low`.
    Huggett { bond_supply: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    pub r_lo: f64,
    /// Upper end of the initial bracket; `None` means `rho - 0.001`.
    pub r_hi: Option<f64>,
    pub tol_r: f64,
    pub max_bisect: usize,
    /// Points of the coarse pre-bracketing sweep.
    pub coarse_points: usize,
    pub construction: Construction,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            r_lo: 0.001,
            r_hi: None,
            tol_r: 1e-6,
            max_bisect: 200,
            coarse_points: 12,
            construction: Construction::ClosedForm,
        }
    }
}

/// Household side at one interest rate.
#[derive(Debug, Clone, Serialize)]
pub struct SupplyPoint {
    pub r: f64,
    pub capital: f64,
    pub boundary: BoundaryClass,
    pub s2_at_xlow: f64,
    pub x_hat: f64,
    pub mu1: f64,
}

/// Capital supply at `r`. Returns `x_low` without solving the distribution
/// when all agents end up at the borrowing limit.
pub fn capital_supply(
    params: &ModelParams,
    r: f64,
    grid: &Grid,
    cfg: &HjbConfig,
    construction: Construction,
) -> Result<SupplyPoint> {
    Ok(solve_supply(params, r, grid, cfg, construction)?.0)
}

/// As [`capital_supply`], also returning the HJB solution and measure when
/// they were computed.
pub fn solve_supply(
    params: &ModelParams,
    r: f64,
    grid: &Grid,
    cfg: &HjbConfig,
    construction: Construction,
) -> Result<(SupplyPoint, Option<(HjbSolution, StationaryMeasure)>)> {
    let boundary = classify_boundary(params, r);
    let all_at_limit = SupplyPoint {
        r,
        capital: params.x_low,
        boundary,
        s2_at_xlow: 0.0,
        x_hat: params.x_low,
        mu1: params.state_mass(0),
    };
    if boundary == BoundaryClass::S2NegativeEverywhere {
        return Ok((all_at_limit, None));
    }
    let sol = solve_hjb(params, r, grid, cfg)?;
    let s2_at_xlow = sol.s[1][0];
    if s2_at_xlow <= 0.0 {
        let m = fpk::closed_form(&sol)?;
        return Ok((SupplyPoint { s2_at_xlow, ..all_at_limit }, Some((sol, m))));
    }
    let m = match construction {
        Construction::ClosedForm => fpk::closed_form(&sol)?,
        Construction::Adjoint => fpk::adjoint(&sol)?,
    };
    let point = SupplyPoint { r, capital: m.capital(), boundary, s2_at_xlow, x_hat: m.x_hat, mu1: m.mu[0] };
    Ok((point, Some((sol, m))))
}

/// Memoised capital supply, keyed by the exact bit pattern of `r`.
pub struct SupplyCurve<'a> {
    params: ModelParams,
    grid: &'a Grid,
    cfg: HjbConfig,
    construction: Construction,
    cache: Mutex<HashMap<u64, SupplyOutcome>>,
}

/// Supply at a rate, or the marker that the support exceeds the grid.
#[derive(Debug, Clone)]
pub enum SupplyOutcome {
    Point(SupplyPoint),
    /// High-income saving is positive on the whole grid, so wealth would
    /// accumulate beyond `x_max`.
    BeyondGrid,
}

impl<'a> SupplyCurve<'a> {
    pub fn new(params: &ModelParams, grid: &'a Grid, cfg: &HjbConfig, construction: Construction) -> Self {
        SupplyCurve { params: *params, grid, cfg: *cfg, construction, cache: Mutex::new(HashMap::new()) }
    }

    pub fn at(&self, r: f64) -> Result<SupplyOutcome> {
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&r.to_bits()) {
            return Ok(hit.clone());
        }
        let outcome = match capital_supply(&self.params, r, self.grid, &self.cfg, self.construction) {
            Ok(p) => SupplyOutcome::Point(p),
            Err(Error::NoCrossing) => SupplyOutcome::BeyondGrid,
            Err(e) => return Err(e),
        };
        self.cache.lock().expect("cache poisoned").insert(r.to_bits(), outcome.clone());
        Ok(outcome)
    }

    pub fn cached_evaluations(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }
}

impl Coupling {
    pub fn demand(&self, params: &ModelParams, r: f64) -> f64 {
        match self {
            Coupling::Aiyagari(prod) => capital_demand(prod, params.labor(), r),
            Coupling::Huggett { bond_supply } => *bond_supply,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if let Coupling::Huggett { bond_supply } = self {
            if !(*bond_supply > params.x_low) {
                return Err(Error::Config(format!(
                    "bond supply {bond_supply} must exceed the borrowing limit {}",
                    params.x_low
                )));
            }
        }
        Ok(())
    }
}

/// Excess supply `K(r) - demand(r)`; `+inf` when the support exceeds the grid.
fn excess(curve: &SupplyCurve, coupling: &Coupling, params: &ModelParams, r: f64) -> Result<f64> {
    Ok(match curve.at(r)? {
        SupplyOutcome::Point(p) => p.capital - coupling.demand(params, r),
        SupplyOutcome::BeyondGrid => f64::INFINITY,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumResult {
    pub r_star: f64,
    #[serde(rename = "K")]
    pub capital: f64,
    #[serde(rename = "N")]
    pub labor: f64,
    pub capital_demand: f64,
    /// Excess supply at `r_star`.
    pub residual: f64,
    /// Bisection steps.
    pub iterations: usize,
    /// `r_star` minus the rate implied by the marginal product of `K`
    /// (Aiyagari only).
    pub fixed_point_gap: Option<f64>,
    /// All sign-change brackets found by the coarse sweep.
    pub brackets: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

pub fn find_equilibrium(
    params: &ModelParams,
    coupling: &Coupling,
    grid: &Grid,
    hjb_cfg: &HjbConfig,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumResult> {
    coupling.validate(params)?;
    let rho = params.rho;
    let r_lo = cfg.r_lo;
    let mut r_hi = cfg.r_hi.unwrap_or(rho - 0.001);
    if !(0.0 < r_lo && r_lo < r_hi && r_hi < rho) {
        return Err(Error::Config(format!("need 0 < r_lo < r_hi < rho, got [{r_lo}, {r_hi}]")));
    }
    let curve = SupplyCurve::new(params, grid, hjb_cfg, cfg.construction);
    let mut warnings = Vec::new();

    let points = cfg.coarse_points.max(2);
    let mut brackets = Vec::new();
    let mut sweep: Vec<(f64, f64)> = Vec::new();
    for _ in 0..8 {
        let rates: Vec<f64> =
            (0..points).map(|k| r_lo + (r_hi - r_lo) * k as f64 / (points - 1) as f64).collect();
        let phis: Vec<f64> = rates
            .par_iter()
            .map(|&r| excess(&curve, coupling, params, r))
            .collect::<Result<_>>()?;
        sweep = rates.into_iter().zip(phis).collect();
        brackets = sweep
            .windows(2)
            .filter(|w| (w[0].1 <= 0.0) != (w[1].1 <= 0.0))
            .map(|w| (w[0].0, w[1].0))
            .collect();
        if !brackets.is_empty() || sweep.last().is_none_or(|p| p.1 > 0.0) {
            break;
        }
        // Excess supply is still negative at the top: move toward rho,
        // where capital supply blows up.
        r_hi = 0.5 * (r_hi + rho);
    }
    let (mut a, mut b) = match brackets.first() {
        Some(&br) => br,
        None => {
            let (lo, hi) = (sweep[0], *sweep.last().expect("non-empty sweep"));
            return Err(Error::NoBracket { lo: lo.0, hi: hi.0, phi_lo: lo.1, phi_hi: hi.1 });
        }
    };
    if brackets.len() > 1 {
        warnings.push(format!(
            "{} sign changes of excess supply; returning the smallest root",
            brackets.len()
        ));
    }
    let mut phi_a = excess(&curve, coupling, params, a)?;
    let mut iterations = 0;
    while b - a > cfg.tol_r {
        if iterations >= cfg.max_bisect {
            break;
        }
        iterations += 1;
        let mid = 0.5 * (a + b);
        let phi_m = excess(&curve, coupling, params, mid)?;
        if (phi_m <= 0.0) == (phi_a <= 0.0) {
            a = mid;
            phi_a = phi_m;
        } else {
            b = mid;
        }
    }
    let r_star = 0.5 * (a + b);
    let supply = match curve.at(r_star)? {
        SupplyOutcome::Point(p) => p,
        SupplyOutcome::BeyondGrid => return Err(Error::NoCrossing),
    };
    let demand = coupling.demand(params, r_star);
    let fixed_point_gap = match coupling {
        Coupling::Aiyagari(prod) => Some(r_star - marginal_product_rate(prod, supply.capital, params.labor())),
        Coupling::Huggett { .. } => None,
    };
    Ok(EquilibriumResult {
        r_star,
        capital: supply.capital,
        labor: params.labor(),
        capital_demand: demand,
        residual: supply.capital - demand,
        iterations,
        fixed_point_gap,
        brackets,
        warnings,
    })
}

/// One row of an interest-rate sweep; solver failures are recorded per row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub capital_supply: Option<f64>,
    pub capital_demand: f64,
    pub s2_at_xlow: Option<f64>,
    pub x_hat: Option<f64>,
    pub mu1: Option<f64>,
    pub error: Option<String>,
}

/// Capital supply and demand over `rates`, evaluated concurrently and
/// returned in input order.
pub fn sweep_r(
    params: &ModelParams,
    coupling: &Coupling,
    rates: &[f64],
    grid: &Grid,
    cfg: &HjbConfig,
    construction: Construction,
) -> Vec<SweepRow> {
    rates
        .par_iter()
        .map(|&r| {
            let demand = coupling.demand(params, r);
            match capital_supply(params, r, grid, cfg, construction) {
                Ok(p) => SweepRow {
                    r,
                    capital_supply: Some(p.capital),
                    capital_demand: demand,
                    s2_at_xlow: Some(p.s2_at_xlow),
                    x_hat: Some(p.x_hat),
                    mu1: Some(p.mu1),
                    error: None,
                },
                Err(e) => SweepRow {
                    r,
                    capital_supply: None,
                    capital_demand: demand,
                    s2_at_xlow: None,
                    x_hat: None,
                    mu1: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Capital supply near `rho`, where it must grow without bound.
#[derive(Debug, Clone, Serialize)]
pub struct BlowupDiagnostic {
    pub rates: Vec<f64>,
    pub capital: Vec<f64>,
    pub strictly_increasing: bool,
    /// `K(last) / K(first)`.
    pub growth: f64,
    /// Whether the solve at `r = rho` reports that the support leaves the
    /// grid.
    pub no_crossing_at_rho: bool,
}

pub const BLOWUP_RATES: [f64; 3] = [0.040, 0.045, 0.048];

pub fn blowup_diagnostic(params: &ModelParams, rates: &[f64], grid: &Grid, cfg: &HjbConfig) -> Result<BlowupDiagnostic> {
    let capital: Vec<f64> = rates
        .iter()
        .map(|&r| capital_supply(params, r, grid, cfg, Construction::ClosedForm).map(|p| p.capital))
        .collect::<Result<_>>()?;
    let strictly_increasing = capital.windows(2).all(|w| w[1] > w[0]);
    let growth = capital.last().copied().unwrap_or(f64::NAN) / capital.first().copied().unwrap_or(f64::NAN);
    let no_crossing_at_rho = matches!(
        capital_supply(params, params.rho, grid, cfg, Construction::ClosedForm),
        Err(Error::NoCrossing)
    );
    Ok(BlowupDiagnostic { rates: rates.to_vec(), capital, strictly_increasing, growth, no_crossing_at_rho })
}
