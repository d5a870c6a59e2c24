//! Implicit upwind finite differences with policy iteration for the coupled
//! two-state HJB system
//!
//! ```text
//! zeta v_j = H(x, y_j, v_j, Dv_j) + lambda_j (v_other - v_j),   j = 1, 2
//! ```
//!
//! under the state constraint at `x_low` (and a reflecting constraint at
//! `x_max`). Each iteration fixes the upwind policy and linearises the
//! `v`-dependence of the aggregator around the previous iterate, so the
//! linear system is a Newton step; its matrix is an M-matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::BandMatrix;
use crate::model::{Envelope, ModelParams, Prefs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    /// Sup-norm tolerance on the discrete HJB residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation weight on each update, in `(0, 1]`.
    pub damping: f64,
    /// Initial pseudo-time step. It grows geometrically after every accepted
    /// update, so the iteration approaches a pure Newton step.
    pub dt: f64,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig { tol: 1e-8, max_iter: 5000, damping: 1.0, dt: 1.0 }
    }
}

/// Which one-sided difference the scheme uses at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Upwind {
    Forward,
    Backward,
    /// Zero saving, `c = r x + y`.
    Stay,
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbSolution {
    pub params: ModelParams,
    pub r: f64,
    #[serde(skip)]
    pub grid: Grid,
    pub v: [Vec<f64>; 2],
    /// Derivative actually used by the scheme at each node.
    pub dv: [Vec<f64>; 2],
    /// Centred differences, for diagnostics only.
    pub dv_centered: [Vec<f64>; 2],
    pub c: [Vec<f64>; 2],
    pub s: [Vec<f64>; 2],
    pub policy: [Vec<Upwind>; 2],
    pub residual: f64,
    pub iterations: usize,
    /// Whether high-income saving is negative at `x_max`, i.e. the upper
    /// truncation does not bind.
    pub top_boundary_ok: bool,
}

/// Snapshot of the discrete policy at one iterate.
struct PolicyEval {
    c: [Vec<f64>; 2],
    s: [Vec<f64>; 2],
    p: [Vec<f64>; 2],
    policy: [Vec<Upwind>; 2],
    flow: [Vec<f64>; 2],
    residual: f64,
}

/// Solve the HJB system at interest rate `r` on `grid`.
pub fn solve_hjb(params: &ModelParams, r: f64, grid: &Grid, cfg: &HjbConfig) -> Result<HjbSolution> {
    if !(r > 0.0 && r <= params.rho) {
        return Err(Error::DomainError(format!("interest rate must lie in (0, rho], got {r}")));
    }
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {}", cfg.damping)));
    }
    if params.rho * params.x_low + params.y[0] <= 0.0 {
        return Err(Error::DomainError("r x_low + y1 must be positive".into()));
    }
    let env = Envelope::new(params, r);
    let v0: Vec<f64> = grid.nodes.iter().map(|&x| env.lower(x)).collect();
    solve_hjb_from(params, r, grid, cfg, [v0.clone(), v0])
}

/// As [`solve_hjb`], starting from a caller-supplied iterate.
pub fn solve_hjb_from(
    params: &ModelParams,
    r: f64,
    grid: &Grid,
    cfg: &HjbConfig,
    mut v: [Vec<f64>; 2],
) -> Result<HjbSolution> {
    let prefs = params.prefs();
    let n = grid.len();
    let mut eval = evaluate_policy(params, &prefs, r, grid, &v)?;
    let mut iterations = 0;
    let mut dt = cfg.dt;
    while eval.residual >= cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(Error::NoConvergence { iterations, residual: eval.residual });
        }
        iterations += 1;
        match try_step(params, &prefs, r, grid, cfg, dt, &v, &eval) {
            Some((v_new, eval_new)) => {
                // Switched evolution relaxation: grow the step with the
                // residual reduction, but always by at least DT_MIN_GROWTH so
                // a slowly falling residual cannot pin dt near its start.
                let ratio = (eval.residual / eval_new.residual).clamp(DT_MIN_GROWTH, DT_GROWTH);
                v = v_new;
                eval = eval_new;
                dt = (dt * ratio).min(DT_MAX);
            }
            None => {
                dt /= DT_GROWTH;
                if dt < DT_MIN {
                    return Err(Error::NoConvergence { iterations, residual: eval.residual });
                }
            }
        }
    }
    let dv_centered = std::array::from_fn(|j| centered_difference(grid, &v[j]));
    let top_boundary_ok = eval.s[1][n - 1] < 0.0;
    Ok(HjbSolution {
        params: *params,
        r,
        grid: grid.clone(),
        v,
        dv: eval.p,
        dv_centered,
        c: eval.c,
        s: eval.s,
        policy: eval.policy,
        residual: eval.residual,
        iterations,
        top_boundary_ok,
    })
}

pub(crate) fn centered_difference(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                (f[1] - f[0]) / grid.h_plus(0)
            } else if i == n - 1 {
                (f[i] - f[i - 1]) / grid.h_minus(i)
            } else {
                (f[i + 1] - f[i - 1]) / (grid.nodes[i + 1] - grid.nodes[i - 1])
            }
        })
        .collect()
}

/// Consumption is restricted to `(0, CONSUMPTION_CAP * c_up(x)]`, with `c_up`
/// the consumption of the upper envelope. The cap never binds at a
/// solution but keeps the discrete Hamiltonian finite at non-monotone
/// iterates.
const CONSUMPTION_CAP: f64 = 10.0;

/// Policy at every node: the maximiser of the monotone discrete Hamiltonian
///
/// ```text
/// max over c of  F(c, v_i) + (s0 - c)^+ D+v_i - (s0 - c)^- D-v_i,
/// ```
///
/// taken separately over saving (`c <= s0`, forward difference) and
/// dissaving (`c >= s0`, backward difference). Only saving is allowed at
/// `x_low` and only dissaving at `x_max`.
fn evaluate_policy(
    params: &ModelParams,
    prefs: &Prefs,
    r: f64,
    grid: &Grid,
    v: &[Vec<f64>; 2],
) -> Result<PolicyEval> {
    let n = grid.len();
    let env = Envelope::new(params, r);
    let mut out = PolicyEval {
        c: [vec![0.0; n], vec![0.0; n]],
        s: [vec![0.0; n], vec![0.0; n]],
        p: [vec![0.0; n], vec![0.0; n]],
        policy: [vec![Upwind::Stay; n], vec![Upwind::Stay; n]],
        flow: [vec![0.0; n], vec![0.0; n]],
        residual: 0.0,
    };
    for j in 0..2 {
        let vj = &v[j];
        let vo = &v[1 - j];
        let y = params.y[j];
        let lam = params.lambda[j];
        for i in 0..n {
            let x = grid.nodes[i];
            let w = prefs.w_of(vj[i])?;
            let s0 = r * x + y;
            if s0 <= 0.0 {
                return Err(Error::DomainError(format!("r x + y <= 0 at x = {x}")));
            }
            let mut choice = Upwind::Stay;
            let mut c = s0;
            let mut p = 0.0;
            let mut best = prefs.flow_w(s0, w);
            if i + 1 < n {
                let pf = (vj[i + 1] - vj[i]) / grid.h_plus(i);
                if pf > 0.0 {
                    let cf = prefs.consumption_w(pf, w).min(s0);
                    let value = prefs.flow_w(cf, w) + (s0 - cf) * pf;
                    if cf < s0 && value > best {
                        (choice, c, p, best) = (Upwind::Forward, cf, pf, value);
                    }
                }
            }
            if i > 0 {
                let pb = (vj[i] - vj[i - 1]) / grid.h_minus(i);
                let c_max = CONSUMPTION_CAP * env.upper_consumption(x).max(s0);
                let cb = if pb > 0.0 { prefs.consumption_w(pb, w).clamp(s0, c_max) } else { c_max };
                let value = prefs.flow_w(cb, w) + (s0 - cb) * pb;
                if cb > s0 && value > best {
                    (choice, c, p, best) = (Upwind::Backward, cb, pb, value);
                }
            }
            if choice == Upwind::Stay {
                p = prefs.costate_for_consumption_w(s0, w);
            }
            let s = if choice == Upwind::Stay { 0.0 } else { s0 - c };
            let res = prefs.zeta * vj[i] - best - lam * (vo[i] - vj[i]);
            out.residual = out.residual.max(res.abs());
            if !res.is_finite() {
                out.residual = f64::INFINITY;
            }
            out.c[j][i] = c;
            out.s[j][i] = s;
            out.p[j][i] = p;
            out.policy[j][i] = choice;
            out.flow[j][i] = prefs.flow_w(c, w);
        }
    }
    Ok(out)
}

/// Assemble the transport-plus-switching generator for a fixed policy, with
/// unknowns interleaved as `2 i + j`. Rows sum to zero; off-diagonals are
/// non-negative.
pub(crate) fn generator(grid: &Grid, lambda: [f64; 2], s: &[Vec<f64>; 2], policy: &[Vec<Upwind>; 2]) -> BandMatrix {
    let n = grid.len();
    let mut a = BandMatrix::zeros(2 * n, 2, 2);
    for i in 0..n {
        for j in 0..2 {
            let row = 2 * i + j;
            let mut diag = -lambda[j];
            a.set(row, 2 * i + (1 - j), lambda[j]);
            match policy[j][i] {
                Upwind::Forward => {
                    let rate = s[j][i] / grid.h_plus(i);
                    a.set(row, 2 * (i + 1) + j, rate);
                    diag -= rate;
                }
                Upwind::Backward => {
                    let rate = -s[j][i] / grid.h_minus(i);
                    a.set(row, 2 * (i - 1) + j, rate);
                    diag -= rate;
                }
                Upwind::Stay => {}
            }
            a.set(row, row, diag);
        }
    }
    a
}

const DT_GROWTH: f64 = 10.0;
const DT_MIN_GROWTH: f64 = 1.5;
const DT_MAX: f64 = 1e12;
const DT_MIN: f64 = 1e-6;

/// One relaxed Newton update. `None` when the step leaves the domain or
/// breaks monotonicity in wealth, in which case the caller shrinks `dt`.
/// The residual is allowed to rise temporarily: policy switches near
/// `x_low` routinely cause transient spikes on the way to convergence.
#[allow(clippy::too_many_arguments)]
fn try_step(
    params: &ModelParams,
    prefs: &Prefs,
    r: f64,
    grid: &Grid,
    cfg: &HjbConfig,
    dt: f64,
    v: &[Vec<f64>; 2],
    eval: &PolicyEval,
) -> Option<([Vec<f64>; 2], PolicyEval)> {
    let n = grid.len();
    let target = newton_step(params, prefs, grid, dt, v, eval).ok()?;
    let omega = cfg.damping;
    let trial: [Vec<f64>; 2] =
        std::array::from_fn(|j| (0..n).map(|i| v[j][i] + omega * (target[j][i] - v[j][i])).collect());
    if !trial.iter().flatten().all(|&x| x < crate::model::V_DOMAIN_MAX) {
        return None;
    }
    // The value function is strictly increasing in wealth. Non-monotone
    // iterates push the dissaving branch onto the consumption cap and the
    // next step is usually worse.
    if !trial.iter().all(|vj| vj.windows(2).all(|w| w[1] > w[0])) {
        return None;
    }
    let eval_new = evaluate_policy(params, prefs, r, grid, &trial).ok()?;
    if !eval_new.residual.is_finite() {
        return None;
    }
    Some((trial, eval_new))
}

fn newton_step(
    params: &ModelParams,
    prefs: &Prefs,
    grid: &Grid,
    dt: f64,
    v: &[Vec<f64>; 2],
    eval: &PolicyEval,
) -> Result<[Vec<f64>; 2]> {
    let n = grid.len();
    let gen = generator(grid, params.lambda, &eval.s, &eval.policy);
    let inv_dt = 1.0 / dt;
    // Linearisation weight on v; capped so the diagonal stays dominant when
    // theta < 1 makes F increasing in v.
    let fv_cap = 0.99 * prefs.zeta;
    let mut m = BandMatrix::zeros(2 * n, 2, 2);
    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        for j in 0..2 {
            let row = 2 * i + j;
            let flow = eval.flow[j][i];
            let fv = ((1.0 - prefs.theta) * flow / v[j][i]).min(fv_cap);
            let mut off_sum = 0.0;
            for col in gen.row_range(row) {
                let a = gen.get(row, col);
                if col == row {
                    m.set(row, col, inv_dt + prefs.zeta - fv - a);
                } else if a != 0.0 {
                    if a < 0.0 {
                        return Err(Error::DomainError(format!("negative transition rate at row {row}")));
                    }
                    m.set(row, col, -a);
                    off_sum += a;
                }
            }
            let diag = m.get(row, row);
            if !(diag > off_sum) {
                return Err(Error::DomainError(format!(
                    "assembled matrix is not an M-matrix at row {row} (diag {diag:e}, off {off_sum:e})"
                )));
            }
            rhs[row] = flow - fv * v[j][i] + inv_dt * v[j][i];
        }
    }
    let sol = m.solve(&rhs)?;
    Ok(std::array::from_fn(|j| (0..n).map(|i| sol[2 * i + j]).collect()))
}

impl HjbSolution {
    pub fn x(&self) -> &[f64] {
        &self.grid.nodes
    }

    /// Saving implied by the centred derivative, second-order accurate where
    /// `v` is smooth. Used by diagnostics that compare against expansions;
    /// the upwind `s` carries an `O(h)` bias of opposite sign in the two
    /// states.
    pub fn saving_centered(&self, j: usize) -> Result<Vec<f64>> {
        let prefs = self.params.prefs();
        let y = self.params.y[j];
        (0..self.grid.len())
            .map(|i| {
                let x = self.grid.nodes[i];
                let w = prefs.w_of(self.v[j][i])?;
                let p = self.dv_centered[j][i];
                if !(p > 0.0) {
                    return Err(Error::DomainError(format!("centred derivative not positive at x = {x}")));
                }
                Ok(self.r * x + y - prefs.consumption_w(p, w))
            })
            .collect()
    }

    pub fn envelope(&self) -> Envelope {
        Envelope::new(&self.params, self.r)
    }

    /// Discrete second divided differences of `v_j` at interior nodes
    /// (zero at the ends).
    pub fn second_difference(&self, j: usize) -> Vec<f64> {
        let g = &self.grid;
        let v = &self.v[j];
        let n = v.len();
        let mut d2 = vec![0.0; n];
        for i in 1..n - 1 {
            let (hm, hp) = (g.h_minus(i), g.h_plus(i));
            d2[i] = 2.0 * ((v[i + 1] - v[i]) / hp - (v[i] - v[i - 1]) / hm) / (hm + hp);
        }
        d2
    }
}

/// A-priori classification of the sign of high-income saving at `x_low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    S2NegativeEverywhere,
    S2PositiveAtBoundary,
    Indeterminate,
}

pub fn classify_boundary(params: &ModelParams, r: f64) -> BoundaryClass {
    let psi = params.psi;
    let a2 = (r * params.x_low + params.y[1]).powf(-1.0 / psi);
    let a1 = (r * params.x_low + params.y[0]).powf(-1.0 / psi);
    let switch = params.lambda[1] * (a2 - a1);
    if (params.zeta() - r) * a2 + switch >= 0.0 {
        BoundaryClass::S2NegativeEverywhere
    } else if (params.rho - r) * a2 + switch < 0.0 {
        BoundaryClass::S2PositiveAtBoundary
    } else {
        BoundaryClass::Indeterminate
    }
}

/// Outcome of the structural checks on a converged solution.
#[derive(Debug, Clone, Serialize)]
pub struct QualitativeReport {
    pub residual_ok: bool,
    pub concave: bool,
    pub within_envelope: bool,
    pub ordered: bool,
    pub s1_zero_at_boundary: bool,
    pub s1_negative_interior: bool,
    pub consumption_positive: bool,
    /// `Dv1(x_low) > Dv2(x_low)`; `None` when `s2(x_low) <= 0`.
    pub marginal_value_gap: Option<bool>,
    /// `s2` changes sign inside the grid; `None` unless `r < rho` and
    /// `s2(x_low) > 0`.
    pub s2_sign_change: Option<bool>,
    pub top_boundary_ok: bool,
}

impl QualitativeReport {
    pub fn all_pass(&self) -> bool {
        self.residual_ok
            && self.concave
            && self.within_envelope
            && self.ordered
            && self.s1_zero_at_boundary
            && self.s1_negative_interior
            && self.consumption_positive
            && self.marginal_value_gap.unwrap_or(true)
            && self.s2_sign_change.unwrap_or(true)
    }

    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        let checks = [
            (self.residual_ok, "residual"),
            (self.concave, "concavity"),
            (self.within_envelope, "envelope bounds"),
            (self.ordered, "v2 > v1"),
            (self.s1_zero_at_boundary, "s1(x_low) = 0"),
            (self.s1_negative_interior, "s1 < 0 on the interior"),
            (self.consumption_positive, "c > 0"),
            (self.marginal_value_gap.unwrap_or(true), "Dv1(x_low) > Dv2(x_low)"),
            (self.s2_sign_change.unwrap_or(true), "s2 sign change"),
        ];
        for (ok, name) in checks {
            if !ok {
                f.push(name);
            }
        }
        f
    }
}

/// Relative slack allowed in the concavity and envelope comparisons.
pub const SHAPE_TOL: f64 = 1e-8;

pub fn assert_qualitative(sol: &HjbSolution, tol: f64) -> QualitativeReport {
    let n = sol.grid.len();
    let env = sol.envelope();
    let x = &sol.grid.nodes;
    let scale = |a: f64| SHAPE_TOL * a.abs().max(1.0);

    let concave = (0..2).all(|j| {
        let v = &sol.v[j];
        let slopes: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / sol.grid.h_plus(i)).collect();
        slopes.windows(2).all(|w| w[1] <= w[0] + scale(w[0]))
    });
    let within_envelope = (0..n).all(|i| {
        let (lo, hi) = (env.lower(x[i]), env.upper(x[i]));
        (0..2).all(|j| sol.v[j][i] >= lo - scale(lo) && sol.v[j][i] <= hi + scale(hi))
    });
    let ordered = (0..n).all(|i| sol.v[1][i] > sol.v[0][i]);
    let s1_zero_at_boundary = sol.s[0][0] == 0.0;
    let s1_negative_interior = (1..n).all(|i| sol.s[0][i] < 0.0);
    let consumption_positive = sol.c.iter().flatten().all(|&c| c > 0.0 && c.is_finite());
    let s2_low = sol.s[1][0];
    let marginal_value_gap = (s2_low > 0.0).then(|| sol.dv[0][0] > boundary_derivative_forward(sol, 1));
    let s2_sign_change = (s2_low > 0.0 && sol.r < sol.params.rho).then(|| sol.s[1].iter().any(|&s| s < 0.0));
    QualitativeReport {
        residual_ok: sol.residual < tol,
        concave,
        within_envelope,
        ordered,
        s1_zero_at_boundary,
        s1_negative_interior,
        consumption_positive,
        marginal_value_gap,
        s2_sign_change,
        top_boundary_ok: sol.top_boundary_ok,
    }
}

/// Second-order one-sided estimate of `Dv_j(x_low)`.
pub fn boundary_derivative_forward(sol: &HjbSolution, j: usize) -> f64 {
    let x = &sol.grid.nodes;
    let v = &sol.v[j];
    let (h1, h2) = (x[1] - x[0], x[2] - x[0]);
    // Derivative at x0 of the quadratic through the first three nodes.
    let d1 = (v[1] - v[0]) / h1;
    let d2 = (v[2] - v[0]) / h2;
    (d1 * h2 - d2 * h1) / (h2 - h1)
}

/// Minimum second difference of `v1` over the first interior cells on a
/// sequence of refined grids. Under the square-root boundary layer it keeps
/// decreasing as the grid is refined.
pub fn boundary_curvature_refinement(
    params: &ModelParams,
    r: f64,
    grids: &[Grid],
    cfg: &HjbConfig,
) -> Result<Vec<f64>> {
    grids
        .iter()
        .map(|g| {
            let sol = solve_hjb(params, r, g, cfg)?;
            let d2 = sol.second_difference(0);
            Ok(d2[1..4].iter().cloned().fold(f64::INFINITY, f64::min))
        })
        .collect()
}

/// Sup-norm deviations of `(v, s)` between solutions at consecutive rates.
#[derive(Debug, Clone, Serialize)]
pub struct RateStability {
    pub rates: Vec<f64>,
    pub dv_sup: Vec<f64>,
    pub ds_sup: Vec<f64>,
}

pub fn stability_in_r(params: &ModelParams, rates: &[f64], grid: &Grid, cfg: &HjbConfig) -> Result<RateStability> {
    let sols: Vec<HjbSolution> = rates.iter().map(|&r| solve_hjb(params, r, grid, cfg)).collect::<Result<_>>()?;
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut dv_sup = Vec::new();
    let mut ds_sup = Vec::new();
    for w in sols.windows(2) {
        dv_sup.push((0..2).map(|j| sup(&w[0].v[j], &w[1].v[j])).fold(0.0, f64::max));
        ds_sup.push((0..2).map(|j| sup(&w[0].s[j], &w[1].s[j])).fold(0.0, f64::max));
    }
    Ok(RateStability { rates: rates.to_vec(), dv_sup, ds_sup })
}
