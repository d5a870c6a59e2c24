//! Far-field expansion of saving at r = rho and the square-root layer of
//! low-income saving at the borrowing limit.

use ezmfg::asymptotics::{boundary_layer, nonexistence_ratio, validate_far_field, FarFieldExpansion};
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{solve_hjb, HjbConfig};
use ezmfg::model::ModelParams;

fn main() -> ezmfg::Result<()> {
    let params = ModelParams::baseline(2.0, 0.4);
    let cfg = HjbConfig::default();

    let exp = FarFieldExpansion::new(&params);
    println!("leading saving: {:?}", exp.leading);
    println!("second-order coefficients: {:?}", exp.second_order_coeff);

    let far_grid = Grid::new(params.x_low, 200.0, 20_000, Spacing::Uniform)?;
    let far = solve_hjb(&params, params.rho, &far_grid, &cfg)?;
    let centred = [far.saving_centered(0)?, far.saving_centered(1)?];
    println!("{:>6} {:>11} {:>11} {:>11} {:>11}", "x", "s1", "s1 approx", "s2", "s2 approx");
    for &x in &[20.0, 50.0, 100.0, 150.0] {
        let i = far_grid.locate(x);
        let xi = far_grid.nodes[i];
        println!(
            "{xi:6.1} {:11.6} {:11.6} {:11.6} {:11.6}",
            centred[0][i],
            exp.saving(0, xi),
            centred[1][i],
            exp.saving(1, xi)
        );
    }
    let ff = validate_far_field(&far, (100.0, 180.0), 0.10)?;
    println!("far field on [100, 180]: relative errors {:?}, pass = {}", ff.max_rel_error, ff.pass);
    let ratio = nonexistence_ratio(&far, (100.0, 180.0), 0.15, 0.1)?;
    println!("drift ratio: slope {:.3}, relative error {:.3}, pass = {}", ratio.fitted_slope, ratio.max_rel_error, ratio.pass);

    let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
    let sol = solve_hjb(&params, 0.0249, &grid, &cfg)?;
    let layer = boundary_layer(&sol, 0.05, 0.2)?;
    println!(
        "boundary layer: kappa = {:.4} (from curvature {:.4}), exponent {:.4}, coefficient {:.5} vs predicted {:.5}",
        layer.layer.kappa, layer.layer.kappa_from_curvature, layer.exponent, layer.fitted_coeff, layer.layer.sqrt_coeff
    );
    if let Some(e) = layer.control_exponent {
        println!("high-income saving is smooth there: fitted exponent {e:.3}");
    }
    Ok(())
}
