//! Stationary wealth distribution, built two independent ways from one HJB
//! solution:
//!
//! * [`closed_form`] integrates the explicit density formula: on
//!   `(x_low, x_hat)`, `s2 g2 = kappa2 exp(int -l1/s1 - l2/s2)` and
//!   `g1 = -s2 g2 / s1`, with a Dirac mass `kappa2 / l1` of low-income agents
//!   at the borrowing limit;
//! * [`adjoint`] takes the null vector of the transpose of the upwind
//!   generator used by the HJB scheme.
//!
//! Both are stored as per-cell masses so CDFs, moments and weak-form residuals
//! are computed identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{generator, HjbSolution, Upwind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    ClosedForm,
    Adjoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryMeasure {
    pub construction: Construction,
    #[serde(skip)]
    pub grid: Grid,
    /// Nodal densities of the absolutely continuous part. The low-income
    /// density is singular at `x_low`; its node value is reported as zero.
    pub g: [Vec<f64>; 2],
    /// Point masses at `x_low`.
    pub mu: [f64; 2],
    /// Mass of the continuous part in each cell `(x_i, x_{i+1}]`.
    pub cell_mass: [Vec<f64>; 2],
    /// First moment `int x dG_j` over each cell.
    pub cell_moment: [Vec<f64>; 2],
    /// Stationary probabilities of the nodes of the upwind chain (adjoint
    /// construction only; empty otherwise).
    #[serde(skip)]
    pub node_mass: [Vec<f64>; 2],
    /// Upper end of the support.
    pub x_hat: f64,
    /// `mass_1 - l2 / (l1 + l2)` after normalising state 2; zero up to
    /// quadrature error for the closed form, identically zero for the
    /// adjoint.
    pub mass_defect: f64,
}

/// Number of interior nodes on which low-income saving is fitted by
/// `-C sqrt(x - x_low)` when integrating through the boundary singularity.
pub const SQRT_FIT_NODES: usize = 3;

/// First zero of high-income saving, by linear interpolation between the
/// last positive node and the first non-positive one. Returns the index of
/// that first non-positive node as well. `NoCrossing` when `s_2` stays
/// positive up to the last cell.
pub fn support_end(sol: &HjbSolution) -> Result<(f64, usize)> {
    let s2 = &sol.s[1];
    let x = &sol.grid.nodes;
    if s2[0] <= 0.0 {
        return Ok((x[0], 0));
    }
    let m = s2.iter().position(|&s| s <= 0.0).ok_or(Error::NoCrossing)?;
    // Saving is never positive at x_max, so a first sign change in the last
    // cell only reflects the truncation.
    if m + 1 == s2.len() {
        return Err(Error::NoCrossing);
    }
    let (sa, sb) = (s2[m - 1], s2[m]);
    Ok((x[m - 1] + sa / (sa - sb) * (x[m] - x[m - 1]), m))
}

/// `int_a^b dz / s(z)` for `s` linear between `sa` and `sb` of equal sign.
fn inverse_linear_integral(h: f64, sa: f64, sb: f64) -> f64 {
    let d = (sb - sa) / sa;
    if d.abs() < 1e-6 {
        h / sa * (1.0 - d / 2.0 + d * d / 3.0)
    } else {
        h * (sb / sa).ln() / (sb - sa)
    }
}

fn dirac_only(sol: &HjbSolution, construction: Construction) -> StationaryMeasure {
    let p = &sol.params;
    let n = sol.grid.len();
    StationaryMeasure {
        construction,
        grid: sol.grid.clone(),
        g: [vec![0.0; n], vec![0.0; n]],
        mu: [p.state_mass(0), p.state_mass(1)],
        cell_mass: [vec![0.0; n - 1], vec![0.0; n - 1]],
        cell_moment: [vec![0.0; n - 1], vec![0.0; n - 1]],
        node_mass: [Vec::new(), Vec::new()],
        x_hat: p.x_low,
        mass_defect: 0.0,
    }
}

/// Closed-form stationary measure.
pub fn closed_form(sol: &HjbSolution) -> Result<StationaryMeasure> {
    let p = &sol.params;
    let grid = &sol.grid;
    let x = &grid.nodes;
    let n = grid.len();
    let (x_hat, m) = support_end(sol)?;
    if m == 0 {
        return Ok(dirac_only(sol, Construction::ClosedForm));
    }
    let (s1, s2) = (&sol.s[0], &sol.s[1]);
    let (l1, l2) = (p.lambda[0], p.lambda[1]);
    // Nodes 1..m-1 lie strictly inside the support.
    let last = m - 1;
    for i in 1..=last {
        if !(s1[i] < 0.0) {
            return Err(Error::NegativeDensity { index: i, value: s1[i] });
        }
    }
    let fit = SQRT_FIT_NODES.min(last);
    let u = |i: usize| x[i] - x[0];
    // Least-squares fit of s1 = -C sqrt(u) on nodes 1..=fit.
    let c_fit = if fit > 0 {
        let num: f64 = (1..=fit).map(|i| -s1[i] * u(i).sqrt()).sum();
        let den: f64 = (1..=fit).map(u).sum();
        num / den
    } else {
        f64::NAN
    };

    // Exponent I(x_i) = int_{x_low}^{x_i} (-l1/s1 - l2/s2).
    let mut expo = vec![0.0; m];
    let (mut low, mut high) = (0.0, 0.0);
    for i in 1..=last {
        high -= l2 * inverse_linear_integral(grid.h_minus(i), s2[i - 1], s2[i]);
        if i <= fit {
            low = 2.0 * l1 * u(i).sqrt() / c_fit;
        } else {
            low -= l1 * inverse_linear_integral(grid.h_minus(i), s1[i - 1], s1[i]);
        }
        expo[i] = low + high;
    }
    let e: Vec<f64> = expo.iter().map(|v| v.exp()).collect();

    // Unnormalised densities (kappa2 = 1).
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    for i in 0..=last {
        g2[i] = e[i] / s2[i];
        if i > 0 {
            g1[i] = -e[i] / s1[i];
        }
    }
    let mut mass = [vec![0.0; n - 1], vec![0.0; n - 1]];
    let mut moment = [vec![0.0; n - 1], vec![0.0; n - 1]];
    for i in 0..last {
        let h = grid.h_plus(i);
        let mid = 0.5 * (x[i] + x[i + 1]);
        mass[1][i] = 0.5 * h * (g2[i] + g2[i + 1]);
        moment[1][i] = 0.5 * h * (x[i] * g2[i] + x[i + 1] * g2[i + 1]);
        if i < fit {
            // g1 ~ E / (C sqrt(u)): integrate in t = sqrt(u).
            let (ta, tb) = (u(i).sqrt(), u(i + 1).sqrt());
            mass[0][i] = 2.0 / c_fit * (tb - ta) * 0.5 * (e[i] + e[i + 1]);
            moment[0][i] = mass[0][i] * mid;
        } else {
            mass[0][i] = 0.5 * h * (g1[i] + g1[i + 1]);
            moment[0][i] = 0.5 * h * (x[i] * g1[i] + x[i + 1] * g1[i + 1]);
        }
    }
    // Partial cell [x_last, x_hat]: s2 falls linearly to zero, so with
    // k = l2 / |Ds2| the density behaves like (x_hat - z)^(k - 1).
    let d = x_hat - x[last];
    if d > 0.0 {
        let k = l2 * d / s2[last];
        let mid = 0.5 * (x[last] + x_hat);
        mass[1][last] = e[last] / l2;
        moment[1][last] = mass[1][last] * (x_hat - d / (k + 1.0));
        mass[0][last] = e[last] * d / (-s1[last] * (k + 1.0));
        moment[0][last] = mass[0][last] * mid;
    }

    let total2: f64 = mass[1].iter().sum();
    let kappa2 = p.state_mass(1) / total2;
    let mu1 = kappa2 / l1;
    for j in 0..2 {
        for v in mass[j].iter_mut().chain(moment[j].iter_mut()) {
            *v *= kappa2;
        }
    }
    for v in g1.iter_mut().chain(g2.iter_mut()) {
        *v *= kappa2;
    }
    let total1: f64 = mu1 + mass[0].iter().sum::<f64>();
    let measure = StationaryMeasure {
        construction: Construction::ClosedForm,
        grid: grid.clone(),
        g: [g1, g2],
        mu: [mu1, 0.0],
        cell_mass: mass,
        cell_moment: moment,
        node_mass: [Vec::new(), Vec::new()],
        x_hat,
        mass_defect: total1 - p.state_mass(0),
    };
    check_finite(&measure)?;
    Ok(measure)
}

/// Stationary measure of the discrete upwind chain.
pub fn adjoint(sol: &HjbSolution) -> Result<StationaryMeasure> {
    let p = &sol.params;
    let grid = &sol.grid;
    let n = grid.len();
    let (x_hat, m) = support_end(sol)?;
    if m == 0 {
        return Ok(dirac_only(sol, Construction::Adjoint));
    }
    let a = generator(grid, p.lambda, &sol.s, &sol.policy);
    let mut at = a.transpose();
    // Low-income agents pile up at x_low, so that mass is strictly positive;
    // pin it to one and normalise afterwards.
    at.clear_row(0);
    at.set(0, 0, 1.0);
    let mut rhs = vec![0.0; 2 * n];
    rhs[0] = 1.0;
    let pi = at.solve(&rhs)?;
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::SingularSolve("stationary vector has no mass".into()));
    }
    let peak = pi.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut node_mass = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for j in 0..2 {
            let v = pi[2 * i + j];
            if v < -1e-10 * peak {
                return Err(Error::NegativeDensity { index: i, value: v / total });
            }
            node_mass[j][i] = v.max(0.0) / total;
        }
    }
    let renorm: f64 = node_mass.iter().flatten().sum();
    for v in node_mass.iter_mut().flatten() {
        *v /= renorm;
    }

    let x = &grid.nodes;
    let mut g = [vec![0.0; n], vec![0.0; n]];
    // Each node carries the mass of its dual cell; node 0 is the point mass.
    let mu = [node_mass[0][0], node_mass[1][0]];
    let mut mass = [vec![0.0; n - 1], vec![0.0; n - 1]];
    let mut moment = [vec![0.0; n - 1], vec![0.0; n - 1]];
    for j in 0..2 {
        for i in 1..n {
            g[j][i] = node_mass[j][i] / grid.dual_width(i);
        }
        for i in 0..n - 1 {
            let h = grid.h_plus(i);
            let right = if i == 0 { 0.0 } else { g[j][i] * 0.5 * h };
            let left = g[j][i + 1] * 0.5 * h;
            mass[j][i] = right + left;
            moment[j][i] = right * (x[i] + 0.25 * h) + left * (x[i + 1] - 0.25 * h);
        }
    }
    let measure = StationaryMeasure {
        construction: Construction::Adjoint,
        grid: grid.clone(),
        g,
        mu,
        cell_mass: mass,
        cell_moment: moment,
        node_mass,
        x_hat,
        mass_defect: 0.0,
    };
    let defect = measure.state_mass(0) - p.state_mass(0);
    let measure = StationaryMeasure { mass_defect: defect, ..measure };
    check_finite(&measure)?;
    Ok(measure)
}

fn check_finite(m: &StationaryMeasure) -> Result<()> {
    let all = m.g.iter().flatten().chain(m.cell_mass.iter().flatten()).chain(m.mu.iter());
    for (k, &v) in all.enumerate() {
        if !v.is_finite() {
            return Err(Error::NegativeDensity { index: k, value: v });
        }
        if v < 0.0 {
            return Err(Error::NegativeDensity { index: k, value: v });
        }
    }
    Ok(())
}

impl StationaryMeasure {
    pub fn state_mass(&self, j: usize) -> f64 {
        self.mu[j] + self.cell_mass[j].iter().sum::<f64>()
    }

    pub fn total_mass(&self) -> f64 {
        self.state_mass(0) + self.state_mass(1)
    }

    /// `G_j` at every node: point mass plus continuous mass up to the node.
    pub fn cdf(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = self.mu[j];
        out.push(acc);
        for m in &self.cell_mass[j] {
            acc += m;
            out.push(acc);
        }
        out
    }

    /// Evaluate a nodal CDF from [`Self::cdf`] at `x`, linear between nodes.
    pub fn cdf_at(&self, cdf: &[f64], x: f64) -> f64 {
        if x < self.grid.x_low {
            return 0.0;
        }
        self.grid.interpolate(cdf, x)
    }

    /// Aggregate wealth `sum_j (mu_j x_low + int x g_j)`.
    pub fn capital(&self) -> f64 {
        (0..2)
            .map(|j| self.mu[j] * self.grid.x_low + self.cell_moment[j].iter().sum::<f64>())
            .sum()
    }

    /// Largest `|G_j^a - G_j^b|` over nodes and states.
    pub fn cdf_distance(&self, other: &StationaryMeasure) -> f64 {
        (0..2)
            .map(|j| {
                self.cdf(j)
                    .iter()
                    .zip(other.cdf(j))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Residual of the weak stationarity condition per state,
    /// `int s_j dphi dm_j - l_j int phi dm_j + l_other int phi dm_other`,
    /// for a test function `phi` with derivative `dphi`.
    pub fn weak_form_residual(
        &self,
        sol: &HjbSolution,
        phi: &dyn Fn(f64) -> f64,
        dphi: &dyn Fn(f64) -> f64,
    ) -> [f64; 2] {
        let x = &self.grid.nodes;
        let lam = sol.params.lambda;
        let integrate = |j: usize, f: &dyn Fn(usize, f64) -> f64| -> f64 {
            let mut acc = self.mu[j] * f(0, x[0]);
            for (i, &mass) in self.cell_mass[j].iter().enumerate() {
                if mass != 0.0 {
                    let xm = self.cell_moment[j][i] / mass;
                    acc += mass * f(i, xm);
                }
            }
            acc
        };
        let drift = |j: usize| {
            let s = &sol.s[j];
            integrate(j, &|i, z| {
                let t = ((z - x[i]) / (x[i + 1] - x[i])).clamp(0.0, 1.0);
                (s[i] + t * (s[i + 1] - s[i])) * dphi(z)
            })
        };
        let phi_int = |j: usize| integrate(j, &|_, z| phi(z));
        let (p1, p2) = (phi_int(0), phi_int(1));
        [
            drift(0) - lam[0] * p1 + lam[1] * p2,
            drift(1) - lam[1] * p2 + lam[0] * p1,
        ]
    }

    /// Closed-form flux identity `s1 g1 + s2 g2 = 0` on interior nodes of
    /// the support, relative to `max |s1 g1|`.
    pub fn flux_defect(&self, sol: &HjbSolution) -> f64 {
        match self.construction {
            Construction::ClosedForm => {
                let n = self.grid.len();
                let mut worst: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for i in 1..n {
                    if self.grid.nodes[i] >= self.x_hat {
                        break;
                    }
                    let f1 = sol.s[0][i] * self.g[0][i];
                    let f2 = sol.s[1][i] * self.g[1][i];
                    worst = worst.max((f1 + f2).abs());
                    scale = scale.max(f1.abs());
                }
                if scale == 0.0 {
                    0.0
                } else {
                    worst / scale
                }
            }
            Construction::Adjoint => self.face_flux_defect(sol),
        }
    }

    /// Discrete flux balance of the upwind chain across every cell face:
    /// rightward flow out of node `i` equals leftward flow out of node
    /// `i + 1`. Relative to the largest face flux.
    fn face_flux_defect(&self, sol: &HjbSolution) -> f64 {
        let g = &self.grid;
        let n = g.len();
        let node_mass = |j: usize, i: usize| self.node_mass[j][i];
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n - 1 {
            let mut right = 0.0;
            let mut left = 0.0;
            for j in 0..2 {
                if sol.policy[j][i] == Upwind::Forward {
                    right += node_mass(j, i) * sol.s[j][i] / g.h_plus(i);
                }
                if sol.policy[j][i + 1] == Upwind::Backward {
                    left += node_mass(j, i + 1) * (-sol.s[j][i + 1]) / g.h_minus(i + 1);
                }
            }
            worst = worst.max((right - left).abs());
            scale = scale.max(right.abs());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}
