//! Model primitives: parameters, the Epstein-Zin aggregator, the Hamiltonian
//! and its derivatives, and the closed-form value-function envelope.
//!
//! Every fractional power of the value function goes through `w = (1-gamma) v`,
//! which is strictly positive on the admissible set (`v < 0`), and is taken as
//! `exp(k * ln w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values of `v` at or above this threshold are treated as outside the domain.
pub const V_DOMAIN_MAX: f64 = -1e-300;

/// How strictly the standing assumptions on `(gamma, psi)` are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Require `gamma > 1`, `psi < 1` and `gamma * psi < 1`.
    #[default]
    Strict,
    /// Accept `gamma * psi >= 1` (used for two of the calibrations and for
    /// the CRRA special case `gamma = 1 / psi`) and emit a warning instead.
    Permissive,
}

/// Preference and income-process parameters of the household problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub rho: f64,
    pub gamma: f64,
    pub psi: f64,
    pub x_low: f64,
    pub y: [f64; 2],
    pub lambda: [f64; 2],
}

/// Firm side of the Aiyagari closure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl Default for ProductionParams {
    fn default() -> Self {
        ProductionParams { a: 0.95, alpha: 0.35, delta: 0.1 }
    }
}

/// Constants derived once from [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub theta: f64,
    pub zeta: f64,
    /// Aggregate labour supply, the stationary mean of income.
    pub labor: f64,
    /// Whether the sufficient condition for existence of an equilibrium holds.
    pub existence_condition: bool,
}

impl ModelParams {
    /// Parameters shared by all bundled calibrations, with the given risk
    /// aversion and elasticity of intertemporal substitution.
    pub fn baseline(gamma: f64, psi: f64) -> Self {
        ModelParams {
            rho: 0.05,
            gamma,
            psi,
            x_low: -0.15,
            y: [0.1, 0.5],
            lambda: [0.4, 0.4],
        }
    }

    /// Check the standing assumptions. Returns human-readable warnings for
    /// assumptions that were relaxed by [`ValidationMode::Permissive`].
    pub fn validate(&self, mode: ValidationMode) -> Result<Vec<String>> {
        let fields = [
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("psi", self.psi),
            ("x_low", self.x_low),
            ("y1", self.y[0]),
            ("y2", self.y[1]),
            ("lambda1", self.lambda[0]),
            ("lambda2", self.lambda[1]),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(violation(name, format!("must be finite, got {value}")));
            }
        }
        if self.rho <= 0.0 {
            return Err(violation("rho", "discount rate must be positive".into()));
        }
        for (j, name) in [(0, "lambda1"), (1, "lambda2")] {
            if self.lambda[j] <= 0.0 {
                return Err(violation(name, "switching intensities must be positive".into()));
            }
        }
        if self.y[1] <= self.y[0] {
            return Err(violation("y2", "income levels must satisfy y1 < y2".into()));
        }
        if self.rho * self.x_low + self.y[0] <= 0.0 {
            return Err(violation(
                "x_low",
                "borrowing limit must satisfy rho * x_low + y1 > 0".into(),
            ));
        }
        if self.gamma == 1.0 {
            return Err(violation("gamma", "gamma = 1 (log utility) is not supported".into()));
        }
        if self.psi == 1.0 {
            return Err(violation("psi", "psi = 1 is not supported".into()));
        }
        if self.gamma <= 1.0 {
            return Err(violation(
                "gamma",
                format!("standing assumption gamma > 1 fails (gamma = {})", self.gamma),
            ));
        }
        if self.psi <= 0.0 || self.psi >= 1.0 {
            return Err(violation(
                "psi",
                format!("standing assumption 0 < psi < 1 fails (psi = {})", self.psi),
            ));
        }
        let mut warnings = Vec::new();
        if self.gamma * self.psi >= 1.0 {
            let msg = format!(
                "standing assumption gamma * psi < 1 fails (gamma * psi = {})",
                self.gamma * self.psi
            );
            match mode {
                ValidationMode::Strict => return Err(violation("gamma*psi", msg)),
                ValidationMode::Permissive => {
                    warnings.push(format!("{msg}; theory does not cover this case"))
                }
            }
        }
        Ok(warnings)
    }

    pub fn theta(&self) -> f64 {
        (1.0 - 1.0 / self.psi) / (1.0 - self.gamma)
    }

    pub fn zeta(&self) -> f64 {
        self.rho / self.theta()
    }

    /// Stationary mean income `N = (y2 l1 + y1 l2) / (l1 + l2)`.
    pub fn labor(&self) -> f64 {
        (self.y[1] * self.lambda[0] + self.y[0] * self.lambda[1]) / (self.lambda[0] + self.lambda[1])
    }

    /// Stationary probability of income state `j`.
    pub fn state_mass(&self, j: usize) -> f64 {
        self.lambda[1 - j] / (self.lambda[0] + self.lambda[1])
    }

    /// Sufficient condition `rho / (theta l2) > (y2 / y1)^(1/psi) - 1`.
    pub fn existence_condition(&self) -> bool {
        self.rho / (self.theta() * self.lambda[1]) > (self.y[1] / self.y[0]).powf(1.0 / self.psi) - 1.0
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants {
            theta: self.theta(),
            zeta: self.zeta(),
            labor: self.labor(),
            existence_condition: self.existence_condition(),
        }
    }

    /// The propensity-to-consume constant `b(r)` of the deterministic problem.
    pub fn b_param(&self, r: f64) -> f64 {
        let (rho, psi) = (self.rho, self.psi);
        rho * ((r + psi * (rho - r)) / rho).powf(1.0 / (1.0 - psi))
    }

    /// Precomputed exponents for the hot loops of the solvers.
    pub fn prefs(&self) -> Prefs {
        Prefs::new(self)
    }
}

fn violation(field: &'static str, reason: String) -> Error {
    Error::AssumptionViolation { field, reason }
}

/// Exponents and constants of the aggregator and Hamiltonian.
#[derive(Debug, Clone, Copy)]
pub struct Prefs {
    pub rho: f64,
    pub gamma: f64,
    pub psi: f64,
    pub theta: f64,
    pub zeta: f64,
    rho_psi: f64,
    /// `w`-exponent of optimal consumption, `(1 - gamma psi) / (1 - gamma)`.
    e_cons: f64,
}

impl Prefs {
    fn new(p: &ModelParams) -> Self {
        let theta = p.theta();
        Prefs {
            rho: p.rho,
            gamma: p.gamma,
            psi: p.psi,
            theta,
            zeta: p.rho / theta,
            rho_psi: p.rho.powf(p.psi),
            e_cons: (1.0 - p.gamma * p.psi) / (1.0 - p.gamma),
        }
    }

    /// `w = (1 - gamma) v`, checked to be strictly positive.
    pub fn w_of(&self, v: f64) -> Result<f64> {
        if !(v < V_DOMAIN_MAX) {
            return Err(Error::DomainError(format!("value {v:e} is not strictly negative")));
        }
        Ok((1.0 - self.gamma) * v)
    }

    /// `F(c, v) = rho / (1 - 1/psi) c^(1-1/psi) w^(1-theta)`, the part of the
    /// aggregator that carries consumption.
    #[inline]
    pub fn flow_w(&self, c: f64, w: f64) -> f64 {
        let e_c = 1.0 - 1.0 / self.psi;
        self.rho / e_c * (e_c * c.ln() + (1.0 - self.theta) * w.ln()).exp()
    }

    pub fn flow(&self, c: f64, v: f64) -> Result<f64> {
        check_pos("c", c)?;
        Ok(self.flow_w(c, self.w_of(v)?))
    }

    /// The aggregator `f(c, v) = F(c, v) - zeta v`.
    pub fn aggregator(&self, c: f64, v: f64) -> Result<f64> {
        Ok(self.flow(c, v)? - self.zeta * v)
    }

    /// Optimal consumption for costate `p > 0` and `w = (1 - gamma) v`.
    #[inline]
    pub fn consumption_w(&self, p: f64, w: f64) -> f64 {
        self.rho_psi * (-self.psi * p.ln() + self.e_cons * w.ln()).exp()
    }

    pub fn consumption(&self, p: f64, v: f64) -> Result<f64> {
        check_pos("p", p)?;
        Ok(self.consumption_w(p, self.w_of(v)?))
    }

    /// Costate at which optimal consumption equals `c`; inverse of
    /// [`Prefs::consumption_w`] in `p`.
    #[inline]
    pub fn costate_for_consumption_w(&self, c: f64, w: f64) -> f64 {
        ((self.rho_psi.ln() + self.e_cons * w.ln() - c.ln()) / self.psi).exp()
    }

    /// `H(x, y, v, p)` with `s0 = r x + y`; `+inf` for `p < 0`.
    pub fn hamiltonian(&self, s0: f64, v: f64, p: f64) -> Result<f64> {
        let w = self.w_of(v)?;
        if p < 0.0 {
            return Ok(f64::INFINITY);
        }
        if p == 0.0 {
            // p^(1-psi) -> 0 while the coefficient is finite.
            return Ok(0.0);
        }
        Ok(s0 * p + self.rho_psi / (self.psi - 1.0) * ((1.0 - self.psi) * p.ln() + self.e_cons * w.ln()).exp())
    }

    /// Closed-form minimum of `H` over `p`, valid for `s0 > 0`.
    pub fn hamiltonian_min(&self, s0: f64, v: f64) -> Result<f64> {
        check_pos("r x + y", s0)?;
        let w = self.w_of(v)?;
        let e = 1.0 - 1.0 / self.psi;
        Ok(self.rho / e * (e * s0.ln() + (1.0 / self.psi - self.gamma) / (1.0 - self.gamma) * w.ln()).exp())
    }

    /// `dH/dv`.
    pub fn h_v(&self, v: f64, p: f64) -> Result<f64> {
        check_pos("p", p)?;
        let w = self.w_of(v)?;
        let g = self.gamma;
        let k = self.rho_psi * (1.0 - g * self.psi) / (self.psi - 1.0);
        Ok(k * ((1.0 - self.psi) * p.ln() + g * (1.0 - self.psi) / (1.0 - g) * w.ln()).exp())
    }

    /// `d2H/dv dp`.
    pub fn h_vp(&self, v: f64, p: f64) -> Result<f64> {
        check_pos("p", p)?;
        let w = self.w_of(v)?;
        let g = self.gamma;
        let k = -self.rho_psi * (1.0 - g * self.psi);
        Ok(k * (-self.psi * p.ln() + g * (1.0 - self.psi) / (1.0 - g) * w.ln()).exp())
    }

    /// `d2H/dv2`.
    pub fn h_vv(&self, v: f64, p: f64) -> Result<f64> {
        check_pos("p", p)?;
        let w = self.w_of(v)?;
        let g = self.gamma;
        let k = -g * self.rho_psi * (1.0 - g * self.psi);
        Ok(k * ((1.0 - self.psi) * p.ln() + (g * (1.0 - self.psi) / (1.0 - g) - 1.0) * w.ln()).exp())
    }

    /// CRRA utility `c^(1-gamma) / (1-gamma)`.
    #[inline]
    pub fn crra(&self, c: f64) -> f64 {
        c.powf(1.0 - self.gamma) / (1.0 - self.gamma)
    }
}

fn check_pos(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::DomainError(format!("{name} must be positive and finite, got {value:e}")))
    }
}

/// Closed-form sub- and supersolutions bracketing the value function.
#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub params: ModelParams,
    pub r: f64,
    pub b: f64,
}

impl Envelope {
    pub fn new(params: &ModelParams, r: f64) -> Self {
        Envelope { params: *params, r, b: params.b_param(r) }
    }

    /// Lower bound: the value of consuming the low-income flow forever.
    pub fn lower(&self, x: f64) -> f64 {
        let g = self.params.gamma;
        (self.r * x + self.params.y[0]).powf(1.0 - g) / (1.0 - g)
    }

    /// Upper bound: the deterministic value with permanent high income.
    pub fn upper(&self, x: f64) -> f64 {
        let g = self.params.gamma;
        (self.b * (x + self.params.y[1] / self.r)).powf(1.0 - g) / (1.0 - g)
    }

    pub fn lower_derivative(&self, x: f64) -> f64 {
        self.r * (self.r * x + self.params.y[0]).powf(-self.params.gamma)
    }

    pub fn upper_derivative(&self, x: f64) -> f64 {
        self.b * (self.b * (x + self.params.y[1] / self.r)).powf(-self.params.gamma)
    }

    /// Consumption attained by the upper envelope,
    /// `rho^psi b^(1-psi) (x + y2 / r) = (r + psi (rho - r)) (x + y2 / r)`.
    pub fn upper_consumption(&self, x: f64) -> f64 {
        let p = &self.params;
        (self.r + p.psi * (p.rho - self.r)) * (x + p.y[1] / self.r)
    }
}

/// Firm capital demand `K_d(r) = N (A alpha / (r + delta))^(1 / (1 - alpha))`.
pub fn capital_demand(prod: &ProductionParams, labor: f64, r: f64) -> f64 {
    labor * (prod.a * prod.alpha / (r + prod.delta)).powf(1.0 / (1.0 - prod.alpha))
}

/// Interest rate implied by the marginal product of capital at `K / N`.
pub fn marginal_product_rate(prod: &ProductionParams, capital: f64, labor: f64) -> f64 {
    prod.a * prod.alpha * (capital / labor).powf(prod.alpha - 1.0) - prod.delta
}
