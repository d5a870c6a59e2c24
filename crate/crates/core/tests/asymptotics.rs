use ezmfg::asymptotics::{boundary_layer, nonexistence_ratio, validate_far_field, FarFieldExpansion};
use ezmfg::equilibrium::{find_equilibrium, Coupling, EquilibriumConfig};
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{solve_hjb, HjbConfig, HjbSolution};
use ezmfg::model::{ModelParams, ProductionParams};
use ezmfg::Error;
use proptest::prelude::*;

fn test2() -> ModelParams {
    ModelParams::baseline(2.0, 0.4)
}

fn far_solution() -> HjbSolution {
    let p = test2();
    let grid = Grid::new(p.x_low, 200.0, 20_000, Spacing::Uniform).unwrap();
    solve_hjb(&p, p.rho, &grid, &HjbConfig::default()).unwrap()
}

fn at_equilibrium(p: &ModelParams, n: usize) -> HjbSolution {
    let eq_grid = Grid::new(p.x_low, 15.0, 2000, Spacing::SqrtBoundary).unwrap();
    let cfg = HjbConfig::default();
    let eq = find_equilibrium(p, &Coupling::Aiyagari(ProductionParams::default()), &eq_grid, &cfg, &EquilibriumConfig::default())
        .unwrap();
    let grid = Grid::new(p.x_low, 15.0, n, Spacing::SqrtBoundary).unwrap();
    solve_hjb(p, eq.r_star, &grid, &cfg).unwrap()
}

fn random_params() -> impl Strategy<Value = ModelParams> {
    (1.1f64..5.0, 0.1f64..0.9, 0.05f64..1.0, 0.05f64..1.0, 0.05f64..0.4, 0.5f64..2.0)
        .prop_filter("gamma psi < 1", |t| t.0 * t.1 < 0.95)
        .prop_map(|(gamma, psi, l1, l2, y1, y2)| ModelParams {
            lambda: [l1, l2],
            y: [y1, y1 + y2],
            ..ModelParams::baseline(gamma, psi)
        })
}

#[test]
fn leading_terms_for_the_baseline() {
    let e = FarFieldExpansion::new(&test2());
    let expected = 0.4 * 0.4 / 0.85;
    assert!((e.leading[0] + expected).abs() < 1e-15);
    assert!((e.leading[1] - expected).abs() < 1e-15);
    assert!((e.leading[1] - 0.18824).abs() < 1e-5);
    assert_eq!(e.leading[0], -e.leading[1]);
}

#[test]
fn second_order_coefficient_for_the_baseline() {
    let p = test2();
    let e = FarFieldExpansion::new(&p);
    let s = p.rho + 0.8;
    let bracket = 1.0 - (0.16 + 0.16 + p.rho * 0.4) / (s * s);
    let expected = 2.0 * 1.4 * 0.4 * 0.16 / (2.0 * s) * (bracket - 0.4 / s);
    for j in 0..2 {
        assert!((e.second_order_coeff[j] - expected).abs() < 1e-15);
        assert!((e.second_order(j, 100.0) - expected / (5.0 + p.y[j])).abs() < 1e-15);
    }
}

#[test]
fn ratio_asymptote_at_x_100() {
    let e = FarFieldExpansion::new(&test2());
    let target = 0.05 * 2.0 * 1.4 / (0.05 * 100.0 + 0.1);
    assert!((e.ratio_asymptote(100.0) - target).abs() < 1e-15);
    assert!((target - 0.02745).abs() < 1e-5);
}

/// `(rho x + y_j)^-gamma` differences give the first neglected order:
/// residual * (rho x)^(1 + gamma) -> -gamma l1 l2 (y2 - y1)^2 / S.
#[test]
fn first_correction_residual_decays_at_the_predicted_rate() {
    let p = test2();
    let e = FarFieldExpansion::new(&p);
    let s = p.rho + p.lambda[0] + p.lambda[1];
    let limit = -p.gamma * p.lambda[0] * p.lambda[1] * (p.y[1] - p.y[0]).powi(2) / s;
    for j in 0..2 {
        let scaled: Vec<f64> = [1e2, 1e3, 1e4, 1e5]
            .iter()
            .map(|&x| e.z_equation_residual(j, x) * (p.rho * x).powf(1.0 + p.gamma))
            .collect();
        let errs: Vec<f64> = scaled.iter().map(|v| (v - limit).abs()).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{scaled:?}");
        assert!(errs[3] < 1e-3 * limit.abs(), "{scaled:?} vs {limit}");
    }
}

#[test]
fn first_correction_derivative() {
    let e = FarFieldExpansion::new(&test2());
    for j in 0..2 {
        for x in [20.0, 80.0, 150.0] {
            let h = 1e-4;
            let fd = (e.z_hat(j, x + h) - e.z_hat(j, x - h)) / (2.0 * h);
            assert!((fd - e.z_hat_derivative(j, x)).abs() < 1e-8 * fd.abs());
        }
    }
}

#[test]
fn windows_are_validated() {
    let sol = far_solution();
    assert!(matches!(validate_far_field(&sol, (0.0, 1.0), 0.1), Err(Error::WindowTooSmall(_))));
    assert!(matches!(validate_far_field(&sol, (100.0, 250.0), 0.1), Err(Error::WindowTooSmall(_))));
    assert!(matches!(validate_far_field(&sol, (100.0, 100.001), 0.1), Err(Error::WindowTooSmall(_))));
    let p = test2();
    let grid = Grid::new(p.x_low, 200.0, 2000, Spacing::Uniform).unwrap();
    let below = solve_hjb(&p, 0.04, &grid, &HjbConfig::default()).unwrap();
    assert!(matches!(validate_far_field(&below, (100.0, 180.0), 0.1), Err(Error::DomainError(_))));
    assert!(matches!(nonexistence_ratio(&below, (100.0, 180.0), 0.15, 0.1), Err(Error::DomainError(_))));
}

#[test]
fn far_field_matches_the_expansion() {
    let sol = far_solution();
    let report = validate_far_field(&sol, (100.0, 180.0), 0.1).unwrap();
    assert!(report.pass, "{report:?}");
    assert_eq!(report.monotone_approach, [true, true]);
    let ratio = nonexistence_ratio(&sol, (100.0, 180.0), 0.15, 0.1).unwrap();
    assert!(ratio.pass, "{ratio:?}");
    assert!((ratio.fitted_slope + 1.0).abs() < 0.1);
}

#[test]
fn boundary_layer_of_test2() {
    let sol = at_equilibrium(&test2(), 2000);
    let rep = boundary_layer(&sol, 0.05, 0.2).unwrap();
    assert!(rep.layer.kappa > 0.0);
    assert!((rep.exponent - 0.5).abs() < 0.05, "{rep:?}");
    assert!(rep.pass(), "{rep:?}");
    // High-income saving is smooth at the limit.
    let control = rep.control_exponent.expect("s2 > 0 at the limit");
    assert!((control - 1.0).abs() < 0.1, "{control}");
}

#[test]
fn kappa_two_ways_agree_on_refined_grids() {
    let p = test2();
    let gaps: Vec<f64> = [2000, 4000]
        .iter()
        .map(|&n| {
            let l = boundary_layer(&at_equilibrium(&p, n), 0.05, 0.2).unwrap().layer;
            (l.kappa_from_curvature - l.kappa).abs() / l.kappa
        })
        .collect();
    assert!(gaps.iter().all(|&g| g < 0.1), "{gaps:?}");
    assert!(gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn boundary_layer_needs_r_below_rho() {
    let p = test2();
    let grid = Grid::new(p.x_low, 15.0, 500, Spacing::SqrtBoundary).unwrap();
    let sol = solve_hjb(&p, p.rho, &grid, &HjbConfig::default()).unwrap();
    assert!(matches!(boundary_layer(&sol, 0.05, 0.2), Err(Error::DomainError(_))));
}

proptest! {
    #[test]
    fn leading_terms_cancel_in_the_drift_balance(p in random_params()) {
        let e = FarFieldExpansion::new(&p);
        prop_assert!(e.leading[0] < 0.0 && e.leading[1] > 0.0);
        let balance = p.lambda[1] * e.leading[0] + p.lambda[0] * e.leading[1];
        prop_assert!(balance.abs() < 1e-15);
    }

    /// The second-order coefficients must reproduce the `1 / x` asymptote
    /// of the drift-balance ratio: `l2 c1 + l1 c2 = rho gamma (1 + psi) (-s1 s2)`.
    #[test]
    fn second_order_terms_give_the_ratio_asymptote(p in random_params()) {
        let e = FarFieldExpansion::new(&p);
        let lhs = p.lambda[1] * e.second_order_coeff[0] + p.lambda[0] * e.second_order_coeff[1];
        let rhs = p.rho * p.gamma * (1.0 + p.psi) * (-e.leading[0] * e.leading[1]);
        prop_assert!((lhs - rhs).abs() < 1e-12 * rhs.abs(), "{} vs {}", lhs, rhs);
    }

    /// Cramer's rule on `(rho + l_j) Q_j - l_j Q_o = rhs_j`.
    #[test]
    fn q_constants_solve_their_linear_system(p in random_params()) {
        let e = FarFieldExpansion::new(&p);
        let [l1, l2] = p.lambda;
        let s = p.rho + l1 + l2;
        let gap2 = (p.y[1] - p.y[0]).powi(2);
        let rhs = |lj: f64, lo: f64| lj * p.gamma / 2.0 * gap2 * (1.0 - p.rho * lj / (s * s) - 2.0 * lo / s);
        let (b1, b2) = (rhs(l1, l2), rhs(l2, l1));
        let det = (p.rho + l1) * (p.rho + l2) - l1 * l2;
        let q1 = (b1 * (p.rho + l2) + l1 * b2) / det;
        let q2 = ((p.rho + l1) * b2 + l2 * b1) / det;
        prop_assert!((e.q_hat[0] - q1).abs() < 1e-10 * q1.abs().max(1e-6));
        prop_assert!((e.q_hat[1] - q2).abs() < 1e-10 * q2.abs().max(1e-6));
        let res = e.q_system_residual();
        prop_assert!(res[0].abs() < 1e-12 && res[1].abs() < 1e-12);
    }
}
