//! Solve the household problem at a fixed interest rate and run the
//! qualitative checks on the result.
//!
//!     cargo run --release --example solve_hjb -- [gamma] [psi] [r]

use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{assert_qualitative, classify_boundary, solve_hjb, HjbConfig};
use ezmfg::model::{ModelParams, ValidationMode};

fn main() -> ezmfg::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let gamma = args.first().copied().unwrap_or(2.0);
    let psi = args.get(1).copied().unwrap_or(0.4);
    let r = args.get(2).copied().unwrap_or(0.0246);

    let params = ModelParams::baseline(gamma, psi);
    for w in params.validate(ValidationMode::Permissive)? {
        println!("warning: {w}");
    }
    let grid = Grid::new(params.x_low, 15.0, 2000, Spacing::SqrtBoundary)?;
    let sol = solve_hjb(&params, r, &grid, &HjbConfig::default())?;
    println!(
        "gamma = {gamma}, psi = {psi}, theta = {:.4}, r = {r}: {} iterations, residual {:.2e}",
        params.theta(),
        sol.iterations,
        sol.residual
    );
    println!("boundary classification: {:?}", classify_boundary(&params, r));

    println!("{:>9} {:>12} {:>12} {:>10} {:>10}", "x", "v1", "v2", "s1", "s2");
    for &x in &[-0.15, -0.1, 0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0] {
        let i = grid.locate(x).min(grid.len() - 1);
        let i = if (grid.nodes[i + 1] - x).abs() < (grid.nodes[i] - x).abs() { i + 1 } else { i };
        println!(
            "{:9.4} {:12.5} {:12.5} {:10.5} {:10.5}",
            grid.nodes[i], sol.v[0][i], sol.v[1][i], sol.s[0][i], sol.s[1][i]
        );
    }

    let report = assert_qualitative(&sol, HjbConfig::default().tol);
    println!("{report:#?}");
    if report.all_pass() {
        println!("all qualitative checks pass");
    } else {
        println!("failed checks: {:?}", report.failures());
    }
    Ok(())
}
