use approx::assert_relative_eq;
use ezmfg::model::{Envelope, ModelParams, ValidationMode};
use ezmfg::Error;
use proptest::prelude::*;

/// Textbook form of the Epstein-Zin aggregator,
/// `rho/(1-1/psi) (1-gamma) v [ (c / ((1-gamma) v)^(1/(1-gamma)))^(1-1/psi) - 1 ]`.
fn aggregator_oracle(p: &ModelParams, c: f64, v: f64) -> f64 {
    let w = (1.0 - p.gamma) * v;
    let e = 1.0 - 1.0 / p.psi;
    p.rho / e * w * ((c / w.powf(1.0 / (1.0 - p.gamma))).powf(e) - 1.0)
}

/// `H = s0 p + rho^psi / (psi - 1) p^(1-psi) w^((1-gamma psi)/(1-gamma))`.
fn hamiltonian_oracle(p: &ModelParams, s0: f64, v: f64, costate: f64) -> f64 {
    let w = (1.0 - p.gamma) * v;
    s0 * costate
        + p.rho.powf(p.psi) / (p.psi - 1.0)
            * costate.powf(1.0 - p.psi)
            * w.powf((1.0 - p.gamma * p.psi) / (1.0 - p.gamma))
}

fn strict_params() -> impl Strategy<Value = ModelParams> {
    (1.05f64..6.0, 0.05f64..0.95)
        .prop_filter("gamma psi < 1", |(g, psi)| g * psi < 0.98)
        .prop_map(|(g, psi)| ModelParams::baseline(g, psi))
}

#[test]
fn theta_for_two_calibrations() {
    assert_relative_eq!(ModelParams::baseline(2.0, 0.4).theta(), 1.5, max_relative = 1e-14);
    assert_relative_eq!(ModelParams::baseline(1.2, 0.4).theta(), 7.5, max_relative = 1e-12);
}

#[test]
fn strict_mode_rejects_gamma_psi_above_one_and_permissive_warns() {
    let p = ModelParams::baseline(2.0, 0.8);
    match p.validate(ValidationMode::Strict) {
        Err(Error::AssumptionViolation { reason, .. }) => assert!(reason.contains("gamma * psi < 1")),
        other => panic!("expected an assumption violation, got {other:?}"),
    }
    let warnings = p.validate(ValidationMode::Permissive).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(ModelParams::baseline(2.0, 0.4).validate(ValidationMode::Strict).unwrap().is_empty());
}

#[test]
fn validation_always_rejects_broken_parameters() {
    let base = ModelParams::baseline(2.0, 0.4);
    let broken = [
        ModelParams { x_low: -3.0, ..base },
        ModelParams { y: [0.5, 0.5], ..base },
        ModelParams { lambda: [0.0, 0.4], ..base },
        ModelParams { psi: 1.0, ..base },
        ModelParams { gamma: 1.0, ..base },
        ModelParams { gamma: 0.5, ..base },
        ModelParams { rho: f64::NAN, ..base },
    ];
    for p in broken {
        for mode in [ValidationMode::Strict, ValidationMode::Permissive] {
            assert!(
                matches!(p.validate(mode), Err(Error::AssumptionViolation { .. })),
                "{p:?} accepted in {mode:?}"
            );
        }
    }
}

#[test]
fn b_at_rho_and_zero() {
    let p = ModelParams::baseline(2.0, 0.4);
    assert_relative_eq!(p.b_param(p.rho), p.rho, max_relative = 1e-15);
    let b0 = p.b_param(0.0);
    assert_relative_eq!(b0, p.rho * p.psi.powf(1.0 / (1.0 - p.psi)), max_relative = 1e-14);
    assert!(b0 > 0.0 && b0 < p.rho);
}

#[test]
fn b_at_three_percent() {
    let p = ModelParams::baseline(2.0, 0.4);
    let b = p.b_param(0.03);
    assert!((b - 0.03165).abs() < 5e-6, "b = {b}");
    assert!(0.03 < b && b < 0.05);
}

/// The upper envelope is the exact value of the deterministic problem with
/// permanent high income, so `zeta v = H(x, y2, v, Dv)` must hold. This pins
/// `b` without reusing its formula.
#[test]
fn upper_envelope_solves_the_deterministic_hjb() {
    for (g, psi, r) in [(2.0, 0.4, 0.03), (1.2, 0.4, 0.02), (4.0, 0.2, 0.045)] {
        let p = ModelParams::baseline(g, psi);
        let env = Envelope::new(&p, r);
        for x in [-0.15, 0.0, 1.0, 7.5, 40.0] {
            let v = env.upper(x);
            let h = 1e-5;
            let dv = (env.upper(x + h) - env.upper(x - h)) / (2.0 * h);
            let lhs = p.zeta() * v;
            let rhs = hamiltonian_oracle(&p, r * x + p.y[1], v, dv);
            assert!((lhs - rhs).abs() < 1e-7 * lhs.abs(), "x = {x}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn aggregator_matches_textbook_form() {
    let p = ModelParams::baseline(2.0, 0.4);
    let prefs = p.prefs();
    // At (c, v) = (1, -1) consumption equals the certainty equivalent, so
    // the aggregator vanishes.
    assert!(prefs.aggregator(1.0, -1.0).unwrap().abs() < 1e-15);
    assert!(aggregator_oracle(&p, 1.0, -1.0).abs() < 1e-15);
    let f = prefs.aggregator(1.0, -2.0).unwrap();
    assert_relative_eq!(f, aggregator_oracle(&p, 1.0, -2.0), max_relative = 1e-13);
    assert!((f - 0.04310).abs() < 5e-6, "f(1, -2) = {f}");
    for (c, v) in [(0.3, -0.5), (2.0, -7.0), (0.05, -40.0)] {
        assert_relative_eq!(prefs.aggregator(c, v).unwrap(), aggregator_oracle(&p, c, v), max_relative = 1e-12);
        assert_relative_eq!(
            prefs.flow(c, v).unwrap(),
            prefs.aggregator(c, v).unwrap() + prefs.zeta * v,
            max_relative = 1e-12
        );
    }
}

#[test]
fn aggregator_domain_errors() {
    let prefs = ModelParams::baseline(2.0, 0.4).prefs();
    assert!(matches!(prefs.aggregator(1.0, 0.0), Err(Error::DomainError(_))));
    assert!(matches!(prefs.aggregator(1.0, 0.3), Err(Error::DomainError(_))));
    assert!(matches!(prefs.aggregator(0.0, -1.0), Err(Error::DomainError(_))));
    assert!(matches!(prefs.aggregator(1.0, -1e-301), Err(Error::DomainError(_))));
}

#[test]
fn crra_limit_of_the_aggregator() {
    let p = ModelParams::baseline(2.0, 0.5);
    let prefs = p.prefs();
    for (c, v) in [(0.3f64, -0.5), (1.0, -2.0), (4.0, -0.1)] {
        let crra = p.rho * c.powf(1.0 - p.gamma) / (1.0 - p.gamma) - p.rho * v;
        assert_relative_eq!(prefs.aggregator(c, v).unwrap(), crra, max_relative = 1e-12);
    }
}

#[test]
fn hamiltonian_is_infinite_for_negative_costate() {
    let prefs = ModelParams::baseline(2.0, 0.4).prefs();
    assert_eq!(prefs.hamiltonian(0.1, -3.0, -0.1).unwrap(), f64::INFINITY);
}

#[test]
fn hamiltonian_minimum_matches_numerical_minimisation() {
    for (g, psi) in [(2.0, 0.4), (1.2, 0.4), (3.0, 0.25)] {
        let p = ModelParams::baseline(g, psi);
        let prefs = p.prefs();
        let (s0, v) = (0.12, -2.5);
        // Golden-section search on log p.
        let h = |lp: f64| hamiltonian_oracle(&p, s0, v, lp.exp());
        let (mut a, mut b) = (-20.0f64, 20.0f64);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if h(c) < h(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let numeric = h(0.5 * (a + b));
        let w = (1.0 - g) * v;
        let closed = p.rho * s0.powf(1.0 - 1.0 / psi) / (1.0 - 1.0 / psi) * w.powf((1.0 / psi - g) / (1.0 - g));
        assert_relative_eq!(numeric, closed, max_relative = 1e-10);
        assert_relative_eq!(prefs.hamiltonian_min(s0, v).unwrap(), closed, max_relative = 1e-12);
    }
}

#[test]
fn consumption_on_the_upper_envelope() {
    let p = ModelParams::baseline(2.0, 0.4);
    let prefs = p.prefs();
    for r in [0.01, 0.03, p.rho] {
        let env = Envelope::new(&p, r);
        let b = p.b_param(r);
        for x in [-0.1, 0.5, 3.0] {
            let c = prefs.consumption(env.upper_derivative(x), env.upper(x)).unwrap();
            let expected = p.rho.powf(p.psi) * b.powf(1.0 - p.psi) * (x + p.y[1] / r);
            assert_relative_eq!(c, expected, max_relative = 1e-11);
            assert_relative_eq!(env.upper_consumption(x), expected, max_relative = 1e-12);
            if r == p.rho {
                assert!((r * x + p.y[1] - c).abs() < 1e-12, "saving must vanish at r = rho");
            }
        }
    }
}

#[test]
fn consumption_first_order_condition() {
    let p = ModelParams::baseline(2.0, 0.4);
    let prefs = p.prefs();
    let (v, costate) = (-3.0, 0.7);
    let c = prefs.consumption(costate, v).unwrap();
    let obj = |c: f64| prefs.flow(c, v).unwrap() - c * costate;
    let h = 1e-6 * c;
    let slope = (obj(c + h) - obj(c - h)) / (2.0 * h);
    assert!(slope.abs() < 1e-7, "d/dc = {slope}");
    assert!(matches!(prefs.consumption(0.0, v), Err(Error::DomainError(_))));
}

#[test]
fn envelope_ordering_and_shape() {
    let p = ModelParams::baseline(2.0, 0.4);
    for r in [0.005, 0.0246, 0.045, p.rho] {
        let env = Envelope::new(&p, r);
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for k in 0..=1000 {
            let x = p.x_low + 15.15 * k as f64 / 1000.0;
            let (lo, hi) = (env.lower(x), env.upper(x));
            assert!(lo < hi && hi < 0.0, "r = {r}, x = {x}: {lo} vs {hi}");
            assert!(lo > prev.0 && hi > prev.1);
            prev = (lo, hi);
        }
    }
    // At r = rho the bounds are the values of consuming y1 or y2 flows.
    let env = Envelope::new(&p, p.rho);
    let x = 2.0;
    assert_relative_eq!(env.upper(x), (p.rho * x + p.y[1]).powf(-1.0) / -1.0, max_relative = 1e-14);
    assert_relative_eq!(env.lower(x), (p.rho * x + p.y[0]).powf(-1.0) / -1.0, max_relative = 1e-14);
}

#[test]
fn hamiltonian_is_coercive_for_default_params() {
    let p = ModelParams::baseline(2.0, 0.4);
    let prefs = p.prefs();
    let (s0, v) = (0.1, -4.0);
    let h_min = prefs.hamiltonian_min(s0, v).unwrap();
    let h_big = prefs.hamiltonian(s0, v, 1e6).unwrap();
    assert!(h_big - h_min > 1e3 * h_min.abs(), "{h_big} vs {h_min}");
}

#[test]
fn labor_and_state_masses() {
    let p = ModelParams::baseline(2.0, 0.4);
    assert_relative_eq!(p.labor(), 0.3, max_relative = 1e-15);
    assert_relative_eq!(p.state_mass(0) + p.state_mass(1), 1.0);
}

proptest! {
    #[test]
    fn b_lies_between_r_and_rho(p in strict_params(), t in 0.001f64..0.999) {
        let r = t * p.rho;
        let b = p.b_param(r);
        prop_assert!(r < b && b < p.rho, "r = {r}, b = {b}");
    }

    #[test]
    fn theta_exceeds_one_in_strict_mode(p in strict_params()) {
        prop_assert!(p.theta() > 1.0);
    }

    #[test]
    fn hamiltonian_convex_in_costate(
        p in strict_params(),
        p1 in 0.01f64..5.0,
        p2 in 0.01f64..5.0,
        t in 0.0f64..1.0,
        v in -20.0f64..-0.1,
    ) {
        let prefs = p.prefs();
        let s0 = 0.2;
        let h = |q: f64| prefs.hamiltonian(s0, v, q).unwrap();
        let mid = h(t * p1 + (1.0 - t) * p2);
        let chord = t * h(p1) + (1.0 - t) * h(p2);
        prop_assert!(mid <= chord + 1e-12 * chord.abs().max(1.0));
    }

    #[test]
    fn hamiltonian_grows_beyond_its_minimiser(p in strict_params(), v in -20.0f64..-0.1, s0 in 0.01f64..1.0) {
        let prefs = p.prefs();
        let h_min = prefs.hamiltonian_min(s0, v).unwrap();
        let h = |q: f64| prefs.hamiltonian(s0, v, q).unwrap();
        // The minimiser is the costate at which optimal consumption is s0.
        let p_star = prefs.costate_for_consumption_w(s0, (1.0 - p.gamma) * v);
        prop_assert!((h(p_star) - h_min).abs() <= 1e-9 * h_min.abs());
        prop_assert!(h_min < h(10.0 * p_star) && h(10.0 * p_star) < h(1e3 * p_star) && h(1e3 * p_star) < h(1e6 * p_star));
    }

    #[test]
    fn hamiltonian_derivative_signs(p in strict_params(), v in -20.0f64..-0.2, q in 0.05f64..5.0) {
        let prefs = p.prefs();
        let s0 = 0.3;
        let dv = 1e-5 * v.abs();
        let dq = 1e-5 * q;
        let h = |v: f64, q: f64| hamiltonian_oracle(&p, s0, v, q);
        let h_v = (h(v + dv, q) - h(v - dv, q)) / (2.0 * dv);
        let h_vv = (h(v + dv, q) - 2.0 * h(v, q) + h(v - dv, q)) / (dv * dv);
        let h_vp = (h(v + dv, q + dq) - h(v + dv, q - dq) - h(v - dv, q + dq) + h(v - dv, q - dq)) / (4.0 * dv * dq);
        prop_assert!(h_v < 0.0 && h_vp < 0.0);
        prop_assert!((prefs.h_v(v, q).unwrap() - h_v).abs() <= 1e-5 * h_v.abs());
        prop_assert!((prefs.h_vp(v, q).unwrap() - h_vp).abs() <= 1e-3 * h_vp.abs());
        let exact_vv = prefs.h_vv(v, q).unwrap();
        prop_assert!(exact_vv < 0.0);
        prop_assert!((exact_vv - h_vv).abs() <= 1e-2 * exact_vv.abs() + 1e-9);
    }

    #[test]
    fn optimal_consumption_maximises(p in strict_params(), v in -20.0f64..-0.1, q in 0.01f64..5.0) {
        let prefs = p.prefs();
        let c = prefs.consumption(q, v).unwrap();
        let obj = |c: f64| prefs.flow(c, v).unwrap() - c * q;
        prop_assert!(obj(1.01 * c) < obj(c));
        prop_assert!(obj(0.99 * c) < obj(c));
    }

    #[test]
    fn aggregator_is_jointly_concave(p in strict_params(), c in 0.05f64..3.0, v in -10.0f64..-0.3) {
        let prefs = p.prefs();
        let f = |c: f64, v: f64| prefs.aggregator(c, v).unwrap();
        let scale = prefs.flow(c, v).unwrap().abs() + (prefs.zeta * v).abs();
        // Second differences along directions spanning the (c, v) plane.
        for k in 0..16 {
            let a = std::f64::consts::PI * k as f64 / 16.0;
            let (dc, dv) = (1e-3 * c * a.cos(), 1e-3 * v.abs() * a.sin());
            let d2 = f(c + dc, v + dv) - 2.0 * f(c, v) + f(c - dc, v - dv);
            prop_assert!(d2 <= 1e-12 * scale, "direction {k}: {d2:e}");
        }
    }
}
