//! Capital supply and demand over a range of rates, and the growth of supply
//! as the rate approaches the discount rate.

use ezmfg::equilibrium::{blowup_diagnostic, sweep_r, Coupling, BLOWUP_RATES};
use ezmfg::fpk::Construction;
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::HjbConfig;
use ezmfg::model::{ModelParams, ProductionParams};

fn main() -> ezmfg::Result<()> {
    let params = ModelParams::baseline(2.0, 0.4);
    let cfg = HjbConfig::default();
    // The support end grows quickly near rho (about x = 229 at r = 0.048),
    // so the grid reaches well beyond the x_max = 15 used for equilibria.
    let grid = Grid::new(params.x_low, 400.0, 8000, Spacing::SqrtBoundary)?;
    let rates: Vec<f64> = (1..=9).map(|k| 0.005 * k as f64).collect();
    let coupling = Coupling::Aiyagari(ProductionParams::default());
    println!("{:>7} {:>10} {:>10} {:>9} {:>9}", "r", "K_supply", "K_demand", "x_hat", "mu1");
    for row in sweep_r(&params, &coupling, &rates, &grid, &cfg, Construction::ClosedForm) {
        match row.error {
            None => println!(
                "{:7.4} {:10.5} {:10.5} {:9.4} {:9.6}",
                row.r,
                row.capital_supply.unwrap_or_default(),
                row.capital_demand,
                row.x_hat.unwrap_or_default(),
                row.mu1.unwrap_or_default()
            ),
            Some(e) => println!("{:7.4} failed: {e}", row.r),
        }
    }

    let d = blowup_diagnostic(&params, &BLOWUP_RATES, &grid, &cfg)?;
    for (r, k) in d.rates.iter().zip(&d.capital) {
        println!("K({r}) = {k:.4}");
    }
    println!(
        "strictly increasing: {}, K(0.048) / K(0.040) = {:.3}, no stationary measure at r = rho: {}",
        d.strictly_increasing, d.growth, d.no_crossing_at_rho
    );
    Ok(())
}
