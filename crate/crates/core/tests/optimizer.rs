use approx::assert_relative_eq;
use collective_core::market::{MarketModel, NodeField};
use collective_core::mortality::{MortalityLaw, MortalityTable};
use collective_core::optimizer::*;
use collective_core::preferences::{EzParams, GainFunction, Utility, VnmParams};
use collective_core::TimeGrid;

fn table(law: MortalityLaw, dt: f64, horizon: f64) -> MortalityTable {
    MortalityTable::new(&law, TimeGrid::new(dt, horizon).unwrap()).unwrap()
}

fn gompertz() -> MortalityLaw {
    MortalityLaw::GompertzMakeham { a: 0.002, b: 0.005, c: 0.12 }
}

fn vnm(u: Utility, b: f64) -> GainFunction {
    GainFunction::Vnm(VnmParams::new(u, b).unwrap())
}

fn ez() -> GainFunction {
    GainFunction::EpsteinZin(EzParams::new(-1.0, 0.5, 0.03, 0.2).unwrap())
}

fn problem(gain: GainFunction, table: MortalityTable, market: MarketModel, size: CollectiveSize) -> HomogeneousProblem {
    HomogeneousProblem::new(gain, table, market, 10.0, size).unwrap()
}

#[test]
fn constant_consumption_is_optimal_without_discounting() {
    let t = table(gompertz(), 1.0, 20.0);
    let p = problem(vnm(Utility::Log, 0.0), t, MarketModel::single(0.0, 0.0, 0.2).unwrap(), CollectiveSize::Infinite);
    let sol = solve_martingale(&p, &KktOptions::default()).unwrap();
    let c = annuity_consumption(&p);
    for &g in sol.consumption.as_slice() {
        assert_relative_eq!(g, c, max_relative = 1e-10);
    }
    let dp = solve_infinite_dp(&p, &DpOptions::default()).unwrap();
    assert_relative_eq!(dp.value, annuity_value(&p).unwrap(), max_relative = 1e-10);
}

#[test]
fn log_without_mortality_spreads_budget_evenly() {
    let t = MortalityTable::no_early_deaths(TimeGrid::new(0.5, 8.0).unwrap());
    let p = problem(vnm(Utility::Log, 0.0), t, MarketModel::bond_only(0.0).unwrap(), CollectiveSize::Finite(1));
    let v = solve_finite_dp(&p, &DpOptions::default()).unwrap();
    assert_relative_eq!(v.value, 8.0 * (10.0f64 / 8.0).ln(), max_relative = 1e-10);
}

#[test]
fn point_mass_mortality_makes_size_irrelevant() {
    let t = table(MortalityLaw::PointMass { time: 7.0 }, 1.0, 10.0);
    let p = problem(vnm(Utility::Power { exponent: -1.0 }, 0.02), t, MarketModel::single(0.01, 0.05, 0.2).unwrap(), CollectiveSize::Finite(1));
    let vals = solve_finite_sizes(&p, &[1, 3, 9], &DpOptions::default()).unwrap();
    let inf = solve_infinite_dp(&p, &DpOptions::default()).unwrap();
    for v in &vals {
        assert_relative_eq!(v.value, inf.value, max_relative = 1e-10);
    }
    let study = convergence_study(&p, &[2, 5], &DpOptions::default()).unwrap();
    assert!(study.rows.iter().all(|r| r.gap.abs() < 1e-10 * inf.value.abs()));
}

#[test]
fn value_is_monotone_in_collective_size() {
    let gains = [vnm(Utility::Power { exponent: -1.0 }, 0.03), vnm(Utility::Log, 0.03), ez()];
    for gain in gains {
        let p = problem(gain, table(gompertz(), 1.0, 12.0), MarketModel::single(0.01, 0.05, 0.2).unwrap(), CollectiveSize::Finite(1));
        let vals = solve_finite_sizes(&p, &[1, 2, 4, 8], &DpOptions::default()).unwrap();
        let inf = solve_infinite_dp(&p, &DpOptions::default()).unwrap();
        for w in vals.windows(2) {
            assert!(w[1].value >= w[0].value - 1e-8, "{} < {}", w[1].value, w[0].value);
        }
        assert!(inf.value >= vals[3].value - 1e-6);
    }
}

#[test]
fn wealth_grid_matches_exact_reduction() {
    let p = problem(
        vnm(Utility::Power { exponent: -1.0 }, 0.03),
        table(gompertz(), 1.0, 10.0),
        MarketModel::single(0.01, 0.05, 0.2).unwrap(),
        CollectiveSize::Finite(3),
    );
    let exact = solve_finite_dp(&p, &DpOptions::default()).unwrap();
    let grid = solve_finite_dp(&p, &DpOptions { force_grid: true, ..DpOptions::default() }).unwrap();
    assert_relative_eq!(grid.value, exact.value, max_relative = 1e-4);
    let p = p.with_size(CollectiveSize::Infinite);
    let exact = solve_infinite_dp(&p, &DpOptions::default()).unwrap();
    let grid = solve_infinite_dp(&p, &DpOptions { force_grid: true, ..DpOptions::default() }).unwrap();
    assert_relative_eq!(grid.value, exact.value, max_relative = 1e-4);
}

#[test]
fn closed_form_matches_dp_for_power_utility() {
    let p = problem(
        vnm(Utility::Power { exponent: -2.0 }, 0.05),
        table(gompertz(), 0.5, 10.0),
        MarketModel::single(0.02, 0.06, 0.25).unwrap(),
        CollectiveSize::Infinite,
    );
    let (a, b, rel) = cross_check_infinite(&p, &DpOptions::default()).unwrap();
    assert_eq!(b.method, Method::ClosedForm);
    assert!(rel < 1e-6, "dp {} martingale {} rel {rel}", a.value, b.value);
}

#[test]
fn epstein_zin_methods_agree() {
    let p = problem(ez(), table(gompertz(), 1.0, 10.0), MarketModel::single(0.01, 0.05, 0.2).unwrap(), CollectiveSize::Infinite);
    let (a, b, rel) = cross_check_infinite(&p, &DpOptions::default()).unwrap();
    assert!(rel < 1e-4, "dp {} martingale {} rel {rel}", a.value, b.value);
}

#[test]
fn annuity_gap_opens_with_discounting() {
    let base = problem(vnm(Utility::Log, 0.05), table(gompertz(), 1.0, 20.0), MarketModel::single(0.0, 0.0, 0.2).unwrap(), CollectiveSize::Infinite);
    let v = solve_infinite_dp(&base, &DpOptions::default()).unwrap().value;
    assert!(v - annuity_value(&base).unwrap() > 1e-4);
    assert_eq!(annuity_value(&base.with_budget(0.0)).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn simulated_policy_reproduces_value() {
    let p = problem(
        vnm(Utility::Power { exponent: -1.0 }, 0.03),
        table(gompertz(), 1.0, 10.0),
        MarketModel::single(0.01, 0.05, 0.2).unwrap(),
        CollectiveSize::Finite(4),
    );
    let v = solve_finite_dp(&p, &DpOptions::default()).unwrap();
    let mc = evaluate_policy_mc(&p, &v.policy, 20_000, 7).unwrap();
    assert_eq!(mc.inadmissible_paths, 0);
    assert!((mc.mean - v.value).abs() < 3.0 * mc.std_error, "mc {} ± {} vs {}", mc.mean, mc.std_error, v.value);
}

#[test]
fn transfer_without_mortality_keeps_full_stream() {
    let t = MortalityTable::no_early_deaths(TimeGrid::new(1.0, 8.0).unwrap());
    let p = problem(ez(), t, MarketModel::single(0.01, 0.05, 0.2).unwrap(), CollectiveSize::Infinite);
    let sol = solve_martingale(&p, &KktOptions::default()).unwrap();
    let r = transfer_infinite_to_finite(&p, &sol.consumption, 0.9, 5, 2000, 3).unwrap();
    assert_relative_eq!(r.gain, r.limit_gain, max_relative = 1e-12);
    assert_eq!(r.audit.violations, 0);
    assert_eq!(r.audit.bound_failures, 0);
}

#[test]
fn transfer_gain_matches_simulation() {
    let t = table(gompertz(), 1.0, 10.0);
    let p = problem(vnm(Utility::Exponential { rate: 0.5 }, 0.02), t, MarketModel::single(0.01, 0.05, 0.2).unwrap(), CollectiveSize::Infinite);
    let gamma = NodeField::from_fn(10, |i, j| 0.8 + 0.01 * i as f64 + 0.02 * j as f64);
    let r = transfer_infinite_to_finite(&p, &gamma, 0.9, 6, 40_000, 11).unwrap();
    let mc = r.audit.gain.unwrap();
    assert_eq!(r.audit.violations, 0);
    assert!((mc.mean - r.gain).abs() < 3.0 * mc.std_error, "mc {} ± {} vs {}", mc.mean, mc.std_error, r.gain);
    assert!(r.gain <= r.limit_gain + 1e-12);
}

#[test]
fn piecewise_measure_problem_matches_brute_force() {
    let u = Utility::PiecewiseLinear { intercept: 0.0, kinks: vec![0.5, 1.5], slopes: vec![2.0, 1.0, 0.2] };
    let mu = [0.2, 0.5, 0.3];
    let budget = 1.2;
    let s = solve_measure_problem(&mu, &u, budget).unwrap();
    let steps = 120;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let g0 = budget * i as f64 / steps as f64 / mu[0];
            let g1 = budget * j as f64 / steps as f64 / mu[1];
            let g2 = budget * (steps - i - j) as f64 / steps as f64 / mu[2];
            best = best.max(mu[0] * u.value(g0) + mu[1] * u.value(g1) + mu[2] * u.value(g2));
        }
    }
    assert!(s.value >= best - 1e-12);
    assert!(s.value - best < 1e-2);
}
