//! Closed-form expansions of the saving policies and checks of numerical
//! solutions against them: the far field at `r = rho` and the square-root
//! layer of low-income saving at `x_low`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::{boundary_derivative_forward, HjbSolution};
use crate::model::ModelParams;

/// Largest `(y2 - y1) / (rho x + y1)` accepted at the left end of a far-field
/// window. The expansion is in powers of this ratio.
pub const MAX_EXPANSION_PARAMETER: f64 = 0.25;

/// Fewest grid nodes a far-field window must contain.
pub const MIN_WINDOW_NODES: usize = 10;

/// Interior nodes used by the boundary-layer fits.
pub const LAYER_FIT_NODES: usize = 10;

/// Expansion of `s_j(x)` as `x -> infinity` when `r = rho`, together with
/// the correction terms of the value function it is built from.
#[derive(Debug, Clone, Serialize)]
pub struct FarFieldExpansion {
    #[serde(skip)]
    params: ModelParams,
    /// Limits `s_j^inf = lambda_j (y_j - y_other) / (rho + lambda_1 + lambda_2)`.
    pub leading: [f64; 2],
    /// Coefficient of `(rho x + y_j)^-1` in `s_j`.
    pub second_order_coeff: [f64; 2],
    /// Constants `Q_j` with `q_j(x) = -Q_j (rho x + y_j)^(-1 - gamma)`.
    pub q_hat: [f64; 2],
}

impl FarFieldExpansion {
    pub fn new(params: &ModelParams) -> Self {
        let ModelParams { rho, gamma, psi, y, lambda, .. } = *params;
        let sum = rho + lambda[0] + lambda[1];
        let gap2 = (y[1] - y[0]).powi(2);
        let mut leading = [0.0; 2];
        let mut second = [0.0; 2];
        let mut q_hat = [0.0; 2];
        for j in 0..2 {
            let (lj, lo) = (lambda[j], lambda[1 - j]);
            leading[j] = lj * (y[j] - y[1 - j]) / sum;
            let q_bracket = 1.0 - (lj * lo + lo * lo + rho * lj) / (sum * sum);
            q_hat[j] = gamma * lj * gap2 / (2.0 * sum) * q_bracket;
            second[j] = gamma * (1.0 + psi) * lj * gap2 / (2.0 * sum) * (q_bracket - lj / sum);
        }
        FarFieldExpansion { params: *params, leading, second_order_coeff: second, q_hat }
    }

    fn base(&self, j: usize, x: f64) -> f64 {
        self.params.rho * x + self.params.y[j]
    }

    /// Two-term prediction of `s_j(x)`.
    pub fn saving(&self, j: usize, x: f64) -> f64 {
        self.leading[j] + self.second_order(j, x)
    }

    pub fn second_order(&self, j: usize, x: f64) -> f64 {
        self.second_order_coeff[j] / self.base(j, x)
    }

    /// First correction `z_j` to the value function.
    pub fn z_hat(&self, j: usize, x: f64) -> f64 {
        let p = &self.params;
        let sum = p.rho + p.lambda[0] + p.lambda[1];
        p.lambda[j] * self.base(j, x).powf(-p.gamma) * (p.y[1 - j] - p.y[j]) / sum
    }

    pub fn z_hat_derivative(&self, j: usize, x: f64) -> f64 {
        let p = &self.params;
        -p.rho * p.gamma * self.z_hat(j, x) / self.base(j, x)
    }

    /// Second correction `q_j` to the value function.
    pub fn q_hat_fn(&self, j: usize, x: f64) -> f64 {
        -self.q_hat[j] * self.base(j, x).powf(-1.0 - self.params.gamma)
    }

    /// Residual of the linear system defining `z_j`,
    /// `(rho + lambda_j) z_j - lambda_j z_other - lambda_j (rho x + y_j)^-gamma (y_other - y_j)`.
    /// It decays like `x^(-1 - gamma)`.
    pub fn z_equation_residual(&self, j: usize, x: f64) -> f64 {
        let p = &self.params;
        let lj = p.lambda[j];
        (p.rho + lj) * self.z_hat(j, x)
            - lj * self.z_hat(1 - j, x)
            - lj * self.base(j, x).powf(-p.gamma) * (p.y[1 - j] - p.y[j])
    }

    /// Residuals of the constant-coefficient system that `q_hat` solves.
    pub fn q_system_residual(&self) -> [f64; 2] {
        let ModelParams { rho, gamma, y, lambda, .. } = self.params;
        let sum = rho + lambda[0] + lambda[1];
        let gap2 = (y[1] - y[0]).powi(2);
        std::array::from_fn(|j| {
            let (lj, lo) = (lambda[j], lambda[1 - j]);
            let rhs = lj * gamma / 2.0 * gap2 * (1.0 - rho * lj / (sum * sum) - 2.0 * lo / sum);
            (rho + lj) * self.q_hat[j] - lj * self.q_hat[1 - j] - rhs
        })
    }

    /// Asymptote of `(lambda_2 s_1 + lambda_1 s_2) / (-s_1 s_2)`.
    pub fn ratio_asymptote(&self, x: f64) -> f64 {
        let p = &self.params;
        p.rho * p.gamma * (1.0 + p.psi) / self.base(0, x)
    }
}

/// Comparison of a numerical `r = rho` solution with the two-term expansion.
#[derive(Debug, Clone, Serialize)]
pub struct FarFieldReport {
    pub window: (f64, f64),
    pub nodes: usize,
    pub expansion: FarFieldExpansion,
    /// Largest `|(s_j - s_j^inf) - second_j| / |second_j|` over the window.
    pub max_rel_error: [f64; 2],
    /// Whether `|s_j - s_j^inf|` decreases through the window.
    pub monotone_approach: [bool; 2],
    pub tol: f64,
    pub pass: bool,
}

/// Comparison of the drift-balance ratio with its `1 / x` asymptote.
#[derive(Debug, Clone, Serialize)]
pub struct NonexistenceReport {
    pub window: (f64, f64),
    pub nodes: usize,
    pub max_rel_error: f64,
    /// Least-squares slope of `log ratio` against `log(rho x + y1)`.
    pub fitted_slope: f64,
    pub tol: f64,
    pub slope_tol: f64,
    pub pass: bool,
}

/// Indices of the grid nodes in `window`, after checking the window is
/// usable for far-field comparisons.
fn window_nodes(sol: &HjbSolution, window: (f64, f64)) -> Result<Vec<usize>> {
    let p = &sol.params;
    if (sol.r - p.rho).abs() > 1e-12 * p.rho {
        return Err(Error::DomainError(format!(
            "far-field expansions need r = rho, got r = {} with rho = {}",
            sol.r, p.rho
        )));
    }
    let (lo, hi) = window;
    if !(lo < hi) || hi > sol.grid.x_max {
        return Err(Error::WindowTooSmall(format!(
            "window [{lo}, {hi}] must be non-empty and end inside the grid (x_max = {})",
            sol.grid.x_max
        )));
    }
    let param = (p.y[1] - p.y[0]) / (p.rho * lo + p.y[0]);
    if !(param > 0.0 && param <= MAX_EXPANSION_PARAMETER) {
        return Err(Error::WindowTooSmall(format!(
            "window starts at x = {lo}, where (y2 - y1) / (rho x + y1) = {param:.3} exceeds \
             {MAX_EXPANSION_PARAMETER}; the expansion does not apply there"
        )));
    }
    let idx: Vec<usize> = (0..sol.grid.len()).filter(|&i| (lo..=hi).contains(&sol.grid.nodes[i])).collect();
    if idx.len() < MIN_WINDOW_NODES {
        return Err(Error::WindowTooSmall(format!(
            "window [{lo}, {hi}] holds {} nodes, need {MIN_WINDOW_NODES}",
            idx.len()
        )));
    }
    Ok(idx)
}

/// Check `s_j - s_j^inf` against the second-order term on `window`. Saving
/// is taken from the centred derivative, see [`HjbSolution::saving_centered`].
pub fn validate_far_field(sol: &HjbSolution, window: (f64, f64), tol: f64) -> Result<FarFieldReport> {
    let idx = window_nodes(sol, window)?;
    let exp = FarFieldExpansion::new(&sol.params);
    let s = [sol.saving_centered(0)?, sol.saving_centered(1)?];
    let mut max_rel_error = [0.0f64; 2];
    let mut monotone_approach = [true; 2];
    for j in 0..2 {
        let mut prev = f64::INFINITY;
        for &i in &idx {
            let x = sol.grid.nodes[i];
            let dev = s[j][i] - exp.leading[j];
            let second = exp.second_order(j, x);
            max_rel_error[j] = max_rel_error[j].max(((dev - second) / second).abs());
            if dev.abs() > prev {
                monotone_approach[j] = false;
            }
            prev = dev.abs();
        }
    }
    let pass = max_rel_error.iter().all(|&e| e < tol);
    Ok(FarFieldReport {
        window,
        nodes: idx.len(),
        expansion: exp,
        max_rel_error,
        monotone_approach,
        tol,
        pass,
    })
}

/// Check `(lambda_2 s_1 + lambda_1 s_2) / (-s_1 s_2)` against
/// `rho gamma (1 + psi) / (rho x + y1)` and fit its power of `rho x + y1`.
pub fn nonexistence_ratio(sol: &HjbSolution, window: (f64, f64), tol: f64, slope_tol: f64) -> Result<NonexistenceReport> {
    let idx = window_nodes(sol, window)?;
    let p = &sol.params;
    let exp = FarFieldExpansion::new(p);
    let mut max_rel_error = 0.0f64;
    let s = [sol.saving_centered(0)?, sol.saving_centered(1)?];
    let mut pts = Vec::with_capacity(idx.len());
    for &i in &idx {
        let x = sol.grid.nodes[i];
        let (s1, s2) = (s[0][i], s[1][i]);
        let ratio = (p.lambda[1] * s1 + p.lambda[0] * s2) / (-s1 * s2);
        let target = exp.ratio_asymptote(x);
        max_rel_error = max_rel_error.max(((ratio - target) / target).abs());
        if ratio > 0.0 {
            pts.push(((p.rho * x + p.y[0]).ln(), ratio.ln()));
        }
    }
    if pts.len() < MIN_WINDOW_NODES {
        return Err(Error::FitFailure("drift-balance ratio is not positive on the window".into()));
    }
    let (fitted_slope, _) = least_squares(&pts);
    let pass = max_rel_error < tol && (fitted_slope + 1.0).abs() <= slope_tol;
    Ok(NonexistenceReport { window, nodes: idx.len(), max_rel_error, fitted_slope, tol, slope_tol, pass })
}

/// Slope and intercept of the least-squares line through `pts`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Square-root layer of `s_1` at the borrowing limit.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryLayer {
    /// The constant `kappa` from boundary values of `v` and `Dv`.
    pub kappa: f64,
    /// `kappa` again, as `s_1 D^2 v_1` at the first interior nodes.
    pub kappa_from_curvature: f64,
    /// Predicted `C` in `s_1(x) - r (x - x_low) ~ -C sqrt(x - x_low)`.
    pub sqrt_coeff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryLayerReport {
    pub layer: BoundaryLayer,
    /// Fitted power of `x - x_low` in `s_1(x) - r (x - x_low)`.
    pub exponent: f64,
    /// Least-squares `C` with the power fixed at 1/2.
    pub fitted_coeff: f64,
    /// Fitted power of `x - x_low` in `s_2(x) - s_2(x_low)`; `None` unless
    /// `s_2(x_low) > 0`.
    pub control_exponent: Option<f64>,
    pub exponent_tol: f64,
    pub coeff_rel_tol: f64,
    pub exponent_ok: bool,
    pub coeff_ok: bool,
    pub kappa_positive: bool,
}

impl BoundaryLayerReport {
    pub fn pass(&self) -> bool {
        self.exponent_ok && self.coeff_ok && self.kappa_positive
    }
}

/// Analyse the layer at `x_low` of a converged solution with `r < rho`.
pub fn boundary_layer(sol: &HjbSolution, exponent_tol: f64, coeff_rel_tol: f64) -> Result<BoundaryLayerReport> {
    let p = &sol.params;
    let r = sol.r;
    if !(r < p.rho) {
        return Err(Error::DomainError(format!("the boundary layer needs r < rho, got r = {r}")));
    }
    let prefs = p.prefs();
    let grid = &sol.grid;
    if grid.len() < LAYER_FIT_NODES + 2 {
        return Err(Error::FitFailure("grid too coarse for the boundary-layer fit".into()));
    }
    let x0 = grid.x_low;
    let v1 = sol.v[0][0];
    let w1 = prefs.w_of(v1)?;
    let base = r * x0 + p.y[0];
    // Zero saving at x_low pins Dv_1 there to the costate of c = r x_low + y1.
    let dv1 = prefs.costate_for_consumption_w(base, w1);
    let dv2 = boundary_derivative_forward(sol, 1);
    let hv = prefs.h_v(v1, dv1)?;
    let kappa = (prefs.zeta - r) * dv1 + p.lambda[0] * (dv1 - dv2) - hv * dv1;

    let d2 = sol.second_difference(0);
    let mut curv: Vec<f64> = (1..=LAYER_FIT_NODES).map(|i| sol.s[0][i] * d2[i]).collect();
    curv.sort_by(f64::total_cmp);
    let kappa_from_curvature = curv[curv.len() / 2];

    // Linearising c = rho^psi (Dv_1)^-psi w^((1 - gamma psi) / (1 - gamma))
    // around the boundary costate gives s_1 - r (x - x_low) = a w^e q_1 with
    // a = psi (r x_low + y1)^(1 + 1/psi) / rho, and q_1^2 ~ 2 kappa (x - x_low) / (a w^e).
    let a = p.psi * base.powf(1.0 + 1.0 / p.psi) / p.rho;
    let e = (p.gamma - 1.0 / p.psi) / (1.0 - p.gamma);
    let sqrt_coeff = (2.0 * kappa.max(0.0) * a * w1.powf(e)).sqrt();

    let mut pts = Vec::with_capacity(LAYER_FIT_NODES);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..=LAYER_FIT_NODES {
        let d = grid.nodes[i] - x0;
        let q = sol.s[0][i] - r * d;
        if !(q < 0.0) {
            return Err(Error::FitFailure(format!("s1 - r (x - x_low) is not negative at node {i}")));
        }
        pts.push((d.ln(), (-q).ln()));
        num += -q * d.sqrt();
        den += d;
    }
    let (exponent, _) = least_squares(&pts);
    let fitted_coeff = num / den;

    let control_exponent = if sol.s[1][0] > 0.0 {
        let s20 = sol.s[1][0];
        let pts: Vec<(f64, f64)> = (1..=LAYER_FIT_NODES)
            .filter_map(|i| {
                let dev = (sol.s[1][i] - s20).abs();
                (dev > 0.0).then(|| ((grid.nodes[i] - x0).ln(), dev.ln()))
            })
            .collect();
        (pts.len() >= 3).then(|| least_squares(&pts).0)
    } else {
        None
    };

    Ok(BoundaryLayerReport {
        layer: BoundaryLayer { kappa, kappa_from_curvature, sqrt_coeff },
        exponent,
        fitted_coeff,
        control_exponent,
        exponent_tol,
        coeff_rel_tol,
        exponent_ok: (exponent - 0.5).abs() <= exponent_tol,
        coeff_ok: sqrt_coeff > 0.0 && ((fitted_coeff - sqrt_coeff) / sqrt_coeff).abs() <= coeff_rel_tol,
        kappa_positive: kappa > 0.0,
    })
}
