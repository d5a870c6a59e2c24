//! Monte Carlo panel of agents following the solved saving policies under
//! two-state Poisson income switching, and its comparison with the
//! stationary measure.
//!
//! Agents are split into fixed chunks of [`CHUNK`] agents. Chunk `k` draws
//! from ChaCha8 seeded with the run seed on stream `k`, so results do not
//! depend on how chunks are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpk::{support_end, StationaryMeasure};
use crate::hjb::HjbSolution;

/// Agents per random-number stream.
pub const CHUNK: usize = 1024;

/// Generator name recorded with simulation output.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3), seed_from_u64(seed), stream = chunk index, 1024 agents per chunk";

/// How income switches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    /// One Bernoulli draw with probability `lambda_j dt` per step.
    #[default]
    PerStep,
    /// Exponential waiting times; a step containing a switch is split there.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_agents: usize,
    pub t_end: f64,
    pub dt: f64,
    /// Start of the window over which state occupancy is time-averaged.
    pub burn_in: f64,
    pub seed: u64,
    pub clock: Clock,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_agents: 100_000, t_end: 500.0, dt: 0.025, burn_in: 250.0, seed: 0, clock: Clock::PerStep }
    }
}

impl SimConfig {
    pub fn validate(&self, lambda: [f64; 2]) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be positive".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive and finite, got {}", self.t_end)));
        }
        let dt_max = 0.01 / lambda[0].max(lambda[1]);
        if !(self.dt > 0.0 && self.dt <= dt_max * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "dt = {} must lie in (0, 0.01 / max lambda] = (0, {dt_max}]",
                self.dt
            )));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return Err(Error::Config(format!("burn_in = {} must lie in [0, t_end)", self.burn_in)));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub agent_id: usize,
    pub wealth: f64,
    /// Income state, 0 (low) or 1 (high).
    pub state: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalMeasure {
    pub samples: Vec<Sample>,
    /// Share of all agents in each state whose wealth is within one grid
    /// cell of `x_low` at `t_end`.
    pub boundary_fraction: [f64; 2],
    /// Share of all agents in each state at `t_end`.
    pub occupancy: [f64; 2],
    /// Share of agent-time in each state over `[burn_in, t_end]`.
    pub time_occupancy: [f64; 2],
    pub x_low: f64,
    pub rng: &'static str,
}

/// Simulate the panel under the policies of `sol`. Initial wealth is uniform
/// on the support `[x_low, x_hat]` (or the whole grid when high-income saving
/// never changes sign), and initial income states follow the stationary
/// probabilities of the income chain.
pub fn simulate(sol: &HjbSolution, cfg: &SimConfig) -> Result<EmpiricalMeasure> {
    let params = &sol.params;
    cfg.validate(params.lambda)?;
    let grid = &sol.grid;
    let x_low = grid.x_low;
    let x_top = match support_end(sol) {
        Ok((x_hat, _)) if x_hat > x_low => x_hat,
        Ok(_) => x_low,
        Err(Error::NoCrossing) => grid.x_max,
        Err(e) => return Err(e),
    };
    let p_high = params.state_mass(1);
    let steps = cfg.steps();
    let dt = cfg.t_end / steps as f64;
    let burn_step = ((cfg.burn_in / dt).ceil() as usize).min(steps);
    let lambda = params.lambda;
    let switch_prob = [lambda[0] * dt, lambda[1] * dt];
    let chunks = cfg.n_agents.div_ceil(CHUNK);

    let table = PolicyTable::new(sol);
    // Agents of a chunk advance in lockstep so their independent update
    // chains overlap in the pipeline.
    let run_chunk = |k: usize| -> (Vec<Sample>, [u64; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let first = k * CHUNK;
        let count = (first + CHUNK).min(cfg.n_agents) - first;
        let mut x = Vec::with_capacity(count);
        let mut state = Vec::with_capacity(count);
        let mut next_switch = Vec::with_capacity(count);
        for _ in 0..count {
            x.push(x_low + (x_top - x_low) * rng.gen::<f64>());
            let j = usize::from(rng.gen::<f64>() < p_high);
            state.push(j);
            next_switch.push(exp_draw(&mut rng, lambda[j]));
        }
        let mut t_prev = vec![0.0; count];
        let mut state_steps = [0u64; 2];
        for step in 0..steps {
            match cfg.clock {
                Clock::PerStep => {
                    for (xa, ja) in x.iter_mut().zip(state.iter()) {
                        *xa = (*xa + table.saving(*ja, *xa) * dt).max(x_low);
                    }
                    for ja in state.iter_mut() {
                        if rng.gen::<f64>() < switch_prob[*ja] {
                            *ja = 1 - *ja;
                        }
                    }
                }
                Clock::Exponential => {
                    let t_next = (step + 1) as f64 * dt;
                    for a in 0..count {
                        while next_switch[a] < t_next {
                            let h = next_switch[a] - t_prev[a];
                            x[a] = (x[a] + table.saving(state[a], x[a]) * h).max(x_low);
                            t_prev[a] = next_switch[a];
                            state[a] = 1 - state[a];
                            next_switch[a] = t_prev[a] + exp_draw(&mut rng, lambda[state[a]]);
                        }
                        x[a] = (x[a] + table.saving(state[a], x[a]) * (t_next - t_prev[a])).max(x_low);
                        t_prev[a] = t_next;
                    }
                }
            }
            if step >= burn_step {
                let high = state.iter().filter(|&&j| j == 1).count() as u64;
                state_steps[1] += high;
                state_steps[0] += count as u64 - high;
            }
        }
        let out = (0..count).map(|a| Sample { agent_id: first + a, wealth: x[a], state: state[a] }).collect();
        (out, state_steps)
    };

    let parts: Vec<(Vec<Sample>, [u64; 2])> = (0..chunks).into_par_iter().map(run_chunk).collect();
    let mut samples = Vec::with_capacity(cfg.n_agents);
    let mut state_steps = [0u64; 2];
    for (s, h) in parts {
        samples.extend(s);
        state_steps[0] += h[0];
        state_steps[1] += h[1];
    }
    let n = cfg.n_agents as f64;
    let near = grid.nodes[1];
    let mut near_count = [0usize; 2];
    let mut state_count = [0usize; 2];
    for s in &samples {
        state_count[s.state] += 1;
        if s.wealth < near {
            near_count[s.state] += 1;
        }
    }
    let boundary_fraction = near_count.map(|k| k as f64 / n);
    let occupancy = state_count.map(|k| k as f64 / n);
    let total_steps = (state_steps[0] + state_steps[1]).max(1) as f64;
    Ok(EmpiricalMeasure {
        samples,
        boundary_fraction,
        occupancy,
        time_occupancy: [state_steps[0] as f64 / total_steps, state_steps[1] as f64 / total_steps],
        x_low,
        rng: RNG_ALGORITHM,
    })
}

/// Saving policies as per-cell intercepts and slopes, linear between nodes
/// and constant beyond either end.
struct PolicyTable<'a> {
    grid: &'a crate::grid::Grid,
    s: [&'a [f64]; 2],
    slope: [Vec<f64>; 2],
}

impl<'a> PolicyTable<'a> {
    fn new(sol: &'a HjbSolution) -> Self {
        let grid = &sol.grid;
        let slope = std::array::from_fn(|j| {
            (0..grid.cells()).map(|i| (sol.s[j][i + 1] - sol.s[j][i]) / grid.h_plus(i)).collect()
        });
        PolicyTable { grid, s: [&sol.s[0], &sol.s[1]], slope }
    }

    #[inline]
    fn saving(&self, j: usize, x: f64) -> f64 {
        let i = self.grid.locate(x);
        let dx = (x - self.grid.nodes[i]).clamp(0.0, self.grid.h_plus(i));
        self.s[j][i] + self.slope[j][i] * dx
    }
}

fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    -(1.0 - rng.gen::<f64>()).ln() / rate
}

impl EmpiricalMeasure {
    /// Sorted wealth of the agents in state `j`.
    pub fn wealth_sorted(&self, j: usize) -> Vec<f64> {
        let mut w: Vec<f64> = self.samples.iter().filter(|s| s.state == j).map(|s| s.wealth).collect();
        w.sort_by(f64::total_cmp);
        w
    }
}

/// Distances between a simulated panel and a stationary measure.
#[derive(Debug, Clone, Serialize)]
pub struct SimComparison {
    /// Kolmogorov-Smirnov distance between the conditional wealth
    /// distributions in each state, `G_j / G_j(inf)` against the panel.
    pub ks: [f64; 2],
    /// `mu_j` of the measure.
    pub mu: [f64; 2],
    pub boundary_fraction: [f64; 2],
    /// `|mu_j - boundary_fraction_j|`.
    pub boundary_gap: [f64; 2],
    pub occupancy: [f64; 2],
    pub time_occupancy: [f64; 2],
}

/// KS distance between sorted samples and a CDF that is continuous except
/// for an atom at `x_low`.
fn ks_against<F: Fn(f64) -> f64>(sorted: &[f64], x_low: f64, cdf: F) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 1.0;
    }
    let mut d = 0.0f64;
    let mut k = 0;
    while k < n {
        let x = sorted[k];
        let mut end = k;
        while end < n && sorted[end] == x {
            end += 1;
        }
        let below = if x <= x_low { 0.0 } else { cdf(x) };
        d = d.max((k as f64 / n as f64 - below).abs());
        d = d.max((end as f64 / n as f64 - cdf(x)).abs());
        k = end;
    }
    d
}

/// Two-sample KS distance between sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut k) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && k < b.len() {
        let x = a[i].min(b[k]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while k < b.len() && b[k] <= x {
            k += 1;
        }
        d = d.max((i as f64 / na - k as f64 / nb).abs());
    }
    d
}

pub fn compare(emp: &EmpiricalMeasure, m: &StationaryMeasure) -> SimComparison {
    let ks = std::array::from_fn(|j| {
        let cdf = m.cdf(j);
        let total = *cdf.last().expect("non-empty grid");
        let sorted = emp.wealth_sorted(j);
        ks_against(&sorted, emp.x_low, |x| m.cdf_at(&cdf, x) / total)
    });
    SimComparison {
        ks,
        mu: m.mu,
        boundary_fraction: emp.boundary_fraction,
        boundary_gap: std::array::from_fn(|j| (m.mu[j] - emp.boundary_fraction[j]).abs()),
        occupancy: emp.occupancy,
        time_occupancy: emp.time_occupancy,
    }
}
