//! Stationary wealth distribution from the closed-form densities, checked
//! against the discrete adjoint of the scheme.

use ezmfg::fpk::{adjoint, closed_form};
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{solve_hjb, HjbConfig};
use ezmfg::model::ModelParams;

fn main() -> ezmfg::Result<()> {
    let params = ModelParams::baseline(2.0, 0.4);
    let r = 0.0246;
    let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
    let sol = solve_hjb(&params, r, &grid, &HjbConfig::default())?;

    let m = closed_form(&sol)?;
    println!("support ends at x_hat = {:.5}", m.x_hat);
    println!("point masses at x_low: mu1 = {:.6}, mu2 = {:.6}", m.mu[0], m.mu[1]);
    for j in 0..2 {
        println!("state {} mass = {:.8} (expected {})", j + 1, m.state_mass(j), params.state_mass(j));
    }
    println!("aggregate capital K = {:.6}", m.capital());
    println!("flux identity defect = {:.2e}", m.flux_defect(&sol));

    let a = adjoint(&sol)?;
    println!("adjoint: mu1 = {:.6}, K = {:.6}", a.mu[0], a.capital());
    println!("sup |G_closed - G_adjoint| = {:.3e}", m.cdf_distance(&a));

    let cdf = [m.cdf(0), m.cdf(1)];
    println!("{:>8} {:>10} {:>10}", "x", "G1", "G2");
    for &x in &[-0.15, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
        println!("{x:8.3} {:10.6} {:10.6}", m.cdf_at(&cdf[0], x), m.cdf_at(&cdf[1], x));
    }
    Ok(())
}
