use ezmfg::fpk::closed_form;
use ezmfg::grid::{Grid, Spacing};
use ezmfg::hjb::{solve_hjb, HjbConfig, HjbSolution, Upwind};
use ezmfg::model::ModelParams;
use ezmfg::sim::{compare, ks_two_sample, simulate, Clock, SimConfig, CHUNK};
use ezmfg::Error;
use proptest::prelude::*;

/// Equilibrium rate of the gamma = 2, psi = 0.4 calibration on the bundled
/// grid, as found by the equilibrium tests.
const R_TEST2: f64 = 0.024885;

fn test2_solution() -> HjbSolution {
    let p = ModelParams::baseline(2.0, 0.4);
    let grid = Grid::new(p.x_low, 15.0, 2000, Spacing::SqrtBoundary).unwrap();
    solve_hjb(&p, R_TEST2, &grid, &HjbConfig::default()).unwrap()
}

fn contracting(n: usize) -> HjbSolution {
    let p = ModelParams::baseline(2.0, 0.4);
    let grid = Grid::new(p.x_low, 15.0, n, Spacing::SqrtBoundary).unwrap();
    let mut sol = solve_hjb(&p, R_TEST2, &grid, &HjbConfig::default()).unwrap();
    for j in 0..2 {
        for i in 0..grid.len() {
            sol.s[j][i] = -0.1 * (grid.nodes[i] - grid.x_low);
            sol.policy[j][i] = if i == 0 { Upwind::Stay } else { Upwind::Backward };
        }
    }
    sol
}

fn short(n_agents: usize, seed: u64) -> SimConfig {
    SimConfig { n_agents, t_end: 50.0, burn_in: 25.0, seed, ..SimConfig::default() }
}

/// Direct two-sample KS distance: largest gap of the empirical CDFs over
/// every sample point.
fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
}

#[test]
fn contraction_drives_everyone_to_the_limit() {
    let sol = contracting(200);
    let n = 20_000;
    for clock in [Clock::PerStep, Clock::Exponential] {
        let cfg = SimConfig { n_agents: n, t_end: 200.0, burn_in: 100.0, seed: 3, clock, ..SimConfig::default() };
        let emp = simulate(&sol, &cfg).unwrap();
        let se = (0.25 / n as f64).sqrt();
        for j in 0..2 {
            assert!((emp.boundary_fraction[j] - 0.5).abs() < 3.0 * se, "{clock:?}: {:?}", emp.boundary_fraction);
        }
        assert!((emp.boundary_fraction[0] + emp.boundary_fraction[1] - 1.0).abs() < 1e-12);
        assert!(emp.samples.iter().all(|s| s.wealth >= sol.grid.x_low && s.wealth < sol.grid.nodes[1]));
    }
}

#[test]
fn same_seed_same_panel() {
    let sol = test2_solution();
    // Not a multiple of the chunk size, so the last chunk is partial.
    let n = 3 * CHUNK + 17;
    for clock in [Clock::PerStep, Clock::Exponential] {
        let cfg = SimConfig { clock, ..short(n, 11) };
        let a = simulate(&sol, &cfg).unwrap();
        let b = simulate(&sol, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.time_occupancy, b.time_occupancy);
        let c = simulate(&sol, &SimConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
        let ids: Vec<usize> = a.samples.iter().map(|s| s.agent_id).collect();
        assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn panels_respect_the_borrowing_limit() {
    let sol = test2_solution();
    let emp = simulate(&sol, &short(5000, 1)).unwrap();
    assert!(emp.samples.iter().all(|s| s.wealth >= sol.grid.x_low));
    assert!(emp.samples.iter().any(|s| s.wealth == sol.grid.x_low));
    assert!(emp.samples.iter().all(|s| s.state < 2));
}

#[test]
fn state_occupancy_matches_the_income_chain() {
    let sol = test2_solution();
    let n = 20_000;
    let emp = simulate(&sol, &short(n, 5)).unwrap();
    let se = (0.25 / n as f64).sqrt();
    for j in 0..2 {
        assert!((emp.occupancy[j] - 0.5).abs() < 3.0 * se, "{:?}", emp.occupancy);
        assert!((emp.time_occupancy[j] - 0.5).abs() < 3.0 * se, "{:?}", emp.time_occupancy);
    }

    // Unequal switching rates.
    let p = ModelParams { lambda: [0.2, 0.6], ..sol.params };
    let grid = sol.grid.clone();
    let skewed = solve_hjb(&p, R_TEST2, &grid, &HjbConfig::default()).unwrap();
    let emp = simulate(&skewed, &SimConfig { dt: 0.01 / 0.6, ..short(n, 5) }).unwrap();
    for j in 0..2 {
        let target = p.state_mass(j);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((emp.occupancy[j] - target).abs() < 3.0 * se, "{:?} vs {target}", emp.occupancy);
    }
}

#[test]
fn ks_of_a_panel_with_itself_is_zero() {
    let emp = simulate(&test2_solution(), &short(4000, 2)).unwrap();
    for j in 0..2 {
        let w = emp.wealth_sorted(j);
        assert_eq!(ks_two_sample(&w, &w), 0.0);
    }
    assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let sol = test2_solution();
    let bad = [
        SimConfig { n_agents: 0, ..SimConfig::default() },
        SimConfig { dt: 0.1, ..SimConfig::default() },
        SimConfig { dt: 0.0, ..SimConfig::default() },
        SimConfig { burn_in: 600.0, ..SimConfig::default() },
        SimConfig { t_end: f64::INFINITY, ..SimConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(simulate(&sol, &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

/// Ten times more agents must bring the panel closer to the stationary
/// measure. The horizon is shorter than the acceptance run to keep the
/// test affordable; at t = 200 the start-up bias is already well below the
/// sampling error of 10^4 agents.
#[test]
fn ks_shrinks_with_more_agents() {
    let sol = test2_solution();
    let m = closed_form(&sol).unwrap();
    let median_ks = |n: usize| {
        let mut ks: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = SimConfig { n_agents: n, t_end: 200.0, burn_in: 100.0, seed, ..SimConfig::default() };
                let c = compare(&simulate(&sol, &cfg).unwrap(), &m);
                c.ks[0].max(c.ks[1])
            })
            .collect();
        ks.sort_by(f64::total_cmp);
        ks[2]
    };
    let (small, large) = (median_ks(10_000), median_ks(100_000));
    assert!(large < small, "{small} then {large}");
}

proptest! {
    #[test]
    fn two_sample_ks_matches_a_direct_count(
        mut a in prop::collection::vec(0u8..20, 1..40),
        mut b in prop::collection::vec(0u8..20, 1..40),
    ) {
        a.sort();
        b.sort();
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let d = ks_two_sample(&a, &b);
        prop_assert!((d - ks_oracle(&a, &b)).abs() < 1e-12);
        prop_assert!((d - ks_two_sample(&b, &a)).abs() < 1e-12);
    }
}
