//! Monte Carlo panel under the solved policies, compared with the
//! stationary measure.
//!
//!     cargo run --release --example simulate -- [n_agents]

use std::time::Instant;

use ezmfg::fpk::closed_form;
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{solve_hjb, HjbConfig};
use ezmfg::model::ModelParams;
use ezmfg::sim::{compare, simulate, Clock, SimConfig};

fn main() -> ezmfg::Result<()> {
    let n_agents = std::env::args().nth(1).map_or(20_000, |a| a.parse().expect("agent count"));
    let params = ModelParams::baseline(2.0, 0.4);
    let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
    let sol = solve_hjb(&params, 0.024885, &grid, &HjbConfig::default())?;
    let m = closed_form(&sol)?;

    for clock in [Clock::PerStep, Clock::Exponential] {
        let cfg = SimConfig { n_agents, clock, seed: 7, ..SimConfig::default() };
        let t = Instant::now();
        let emp = simulate(&sol, &cfg)?;
        let c = compare(&emp, &m);
        println!("{clock:?}, {n_agents} agents ({:.1?}):", t.elapsed());
        println!("  KS per state      {:.4} {:.4}", c.ks[0], c.ks[1]);
        println!("  mu1 vs panel      {:.5} {:.5}", c.mu[0], c.boundary_fraction[0]);
        println!("  final occupancy   {:.4} {:.4}", c.occupancy[0], c.occupancy[1]);
        println!("  time occupancy    {:.4} {:.4}", c.time_occupancy[0], c.time_occupancy[1]);
    }
    Ok(())
}
