//! Market-clearing interest rates for the five bundled calibrations, plus a
//! Huggett round trip.

use std::time::Instant;

use ezmfg::equilibrium::{find_equilibrium, Coupling, EquilibriumConfig};
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::HjbConfig;
use ezmfg::model::{ModelParams, ProductionParams};

fn main() -> ezmfg::Result<()> {
    let calibrations = [
        ("test 1", 2.0, 0.8),
        ("test 2", 2.0, 0.4),
        ("test 3", 4.0, 0.4),
        ("test 4", 1.2, 0.4),
        ("crra", 2.0, 0.5),
    ];
    let aiyagari = Coupling::Aiyagari(ProductionParams::default());
    let eq_cfg = EquilibriumConfig::default();
    for (name, gamma, psi) in calibrations {
        let params = ModelParams::baseline(gamma, psi);
        let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
        let t = Instant::now();
        let eq = find_equilibrium(&params, &aiyagari, &grid, &HjbConfig::default(), &eq_cfg)?;
        println!(
            "{name:7} gamma = {gamma:3}, psi = {psi:3}: r* = {:.6}, K = {:.4}, fixed-point gap {:.1e} ({:.2?})",
            eq.r_star,
            eq.capital,
            eq.fixed_point_gap.unwrap_or(0.0),
            t.elapsed()
        );
    }

    // A bond market with supply equal to the capital held at r = 0.02 must
    // clear at r = 0.02.
    let params = ModelParams::baseline(2.0, 0.4);
    let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
    let k = ezmfg::equilibrium::capital_supply(&params, 0.02, &grid, &HjbConfig::default(), eq_cfg.construction)?;
    let huggett = Coupling::Huggett { bond_supply: k.capital };
    let eq = find_equilibrium(&params, &huggett, &grid, &HjbConfig::default(), &eq_cfg)?;
    println!("huggett with B = K(0.02) = {:.5}: r* = {:.7}", k.capital, eq.r_star);
    Ok(())
}
