use approx::assert_relative_eq;
use collective_core::heterogeneous::*;
use collective_core::market::{MarketModel, NodeField};
use collective_core::mortality::{MortalityLaw, MortalityTable};
use collective_core::optimizer::{solve_finite_dp, solve_martingale, CollectiveSize, DpOptions, KktOptions};
use collective_core::preferences::{EzParams, GainFunction, Utility, VnmParams};
use collective_core::TimeGrid;

fn grid() -> TimeGrid {
    TimeGrid::new(1.0, 10.0).unwrap()
}

fn market() -> MarketModel {
    MarketModel::single(0.01, 0.05, 0.2).unwrap()
}

fn types() -> Vec<InvestorType> {
    let g = grid();
    let young = MortalityTable::new(&MortalityLaw::GompertzMakeham { a: 0.002, b: 0.005, c: 0.12 }, g).unwrap();
    let old = MortalityTable::new(&MortalityLaw::GompertzMakeham { a: 0.004, b: 0.02, c: 0.12 }, g).unwrap();
    vec![
        InvestorType::new("saver", 10.0, young, GainFunction::Vnm(VnmParams::new(Utility::Power { exponent: -1.0 }, 0.03).unwrap())).unwrap(),
        InvestorType::new("spender", 6.0, old, GainFunction::Vnm(VnmParams::new(Utility::Log, 0.05).unwrap())).unwrap(),
    ]
}

#[test]
fn weights_are_exact() {
    let w = PopulationWeights::parse(&["1/3", "1/6", "1/2"]).unwrap();
    assert_eq!(w.lcm(), 6);
    assert_eq!(w.counts(12).unwrap(), vec![4, 2, 6]);
    assert!(w.counts(9).is_err());
    assert!(PopulationWeights::parse(&["1/3", "1/3"]).is_err());
    assert!(PopulationWeights::parse(&["x"]).is_err());
    let json = serde_json::to_string(&w).unwrap();
    assert_eq!(json, r#"["1/3","1/6","1/2"]"#);
    assert_eq!(serde_json::from_str::<PopulationWeights>(&json).unwrap(), w);
}

#[test]
fn basic_scheme_reduces_to_homogeneous_funds() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let scheme = BasicScheme::new(market());
    let gains = scheme.gains(&w, &ts, 20).unwrap();
    for (t, g) in ts.iter().zip(&gains) {
        let v = solve_finite_dp(&t.problem(&market(), CollectiveSize::Finite(10)).unwrap(), &DpOptions::default()).unwrap();
        assert_eq!(*g, v.value);
    }
    let single = PopulationWeights::uniform(1).unwrap();
    let g1 = scheme.gains(&single, &ts[..1], 5).unwrap();
    let v = solve_finite_dp(&ts[0].problem(&market(), CollectiveSize::Finite(5)).unwrap(), &DpOptions::default()).unwrap();
    assert_eq!(g1[0], v.value);
    assert!(scheme.gains(&w, &ts, 3).is_err());
}

#[test]
fn fairness_axiom() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let basic = BasicScheme::new(market());
    let small = sample_realisation(&w, &ts, 4, &market(), 5).unwrap();
    assert!(check_axiom_fairness(&basic, &w, &ts, &small, 0, 1).unwrap().passed);
    let big = sample_realisation(&w, &ts, 12, &market(), 5).unwrap();
    assert!(check_axiom_fairness(&basic, &w, &ts, &big, 100, 1).unwrap().passed);
    let planted = UnequalPayScheme { base: basic, bonus: 0.1 };
    let r = check_axiom_fairness(&planted, &w, &ts, &big, 100, 1).unwrap();
    assert!(!r.passed);
    assert!(r.violations[0].starts_with("unequal pay: individuals 0 and 1 of type saver at t index 0"), "{:?}", r.violations);
}

#[test]
fn monotone_axiom() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let basic = BasicScheme::new(market());
    let (r, rows) = check_axiom_monotone(&basic, &w, &ts, &[2, 4, 8], 1e-8).unwrap();
    assert!(r.passed, "{:?}", r.violations);
    assert_eq!(rows.len(), 3);
    let planted = WastefulScheme { base: basic, from: 8, waste: 0.3 };
    let (r, _) = check_axiom_monotone(&planted, &w, &ts, &[2, 4, 8], 1e-8).unwrap();
    assert!(!r.passed);
    assert!(r.violations.iter().any(|v| v.contains("type saver loses from n = 4")));
}

#[test]
fn performance_axiom() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let basic = BasicScheme::new(market());
    assert!(check_axiom_performance(&basic, &w, &ts, 6, &market(), &DpOptions::default(), 1e-8).unwrap().passed);
    let r = check_axiom_performance(&ProRataPoolScheme, &w, &ts, 6, &market(), &DpOptions::default(), 1e-8).unwrap();
    assert!(!r.passed);
    assert!(r.violations.iter().any(|v| v.starts_with("type saver")), "{:?}", r.violations);
}

#[test]
fn pareto_audit_of_limiting_cashflows() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let flows = |shift: f64| -> Vec<NodeField> {
        ts.iter()
            .enumerate()
            .map(|(z, t)| {
                let b = if z == 0 { t.budget - shift } else { t.budget + shift };
                let p = InvestorType { budget: b, ..t.clone() }.problem(&market(), CollectiveSize::Infinite).unwrap();
                solve_martingale(&p, &KktOptions::default()).unwrap().consumption
            })
            .collect()
    };
    let opts = AuditOptions::default();
    let a = pareto_audit(&flows(0.0), &w, &ts, &market(), &DpOptions::default(), &opts).unwrap();
    assert!(a.budget_identity);
    assert_relative_eq!(a.total_cost, a.total_budget, max_relative = 1e-12);
    assert!(a.rows.iter().all(|r| r.verdict == Verdict::Matches));
    let a = pareto_audit(&flows(1.0), &w, &ts, &market(), &DpOptions::default(), &opts).unwrap();
    assert!(a.budget_identity && !a.free_lunch);
    assert_eq!(a.peter_paul, vec![("spender".to_string(), "saver".to_string())]);
    let zero: Vec<NodeField> = (0..2).map(|_| NodeField::zeros(10)).collect();
    let a = pareto_audit(&zero, &w, &ts, &market(), &DpOptions::default(), &opts).unwrap();
    assert_eq!(a.total_cost, 0.0);
    assert!(a.rows.iter().all(|r| r.verdict == Verdict::Below));
}

#[test]
fn free_lunch_is_flagged() {
    let ts = types();
    let w = PopulationWeights::uniform(2).unwrap();
    let flows: Vec<NodeField> = ts
        .iter()
        .enumerate()
        .map(|(z, t)| {
            let b = if z == 0 { t.budget * 1.2 } else { t.budget };
            let p = InvestorType { budget: b, ..t.clone() }.problem(&market(), CollectiveSize::Infinite).unwrap();
            solve_martingale(&p, &KktOptions::default()).unwrap().consumption
        })
        .collect();
    let a = pareto_audit(&flows, &w, &ts, &market(), &DpOptions::default(), &AuditOptions::default()).unwrap();
    assert!(!a.budget_identity);
    assert!(a.free_lunch);
}

#[test]
fn value_is_concave_in_budget() {
    let ts = types();
    let ez = InvestorType::new("ez", 1.0, ts[0].table.clone(), GainFunction::EpsteinZin(EzParams::new(-1.0, 0.5, 0.03, 0.2).unwrap())).unwrap();
    for t in [&ts[0], &ts[1], &ez] {
        let c = value_vs_budget_curve(t, &market(), &[1.0, 2.0, 4.0], &DpOptions::default(), 1e-9).unwrap();
        assert!(c.concave, "{} {:?}", t.id, c.midpoint_gaps);
        assert!(c.midpoint_gaps.iter().filter(|g| g.0 == g.1).all(|g| g.2.abs() < 1e-12));
        if t.id != "ez" {
            assert!(c.scaling_error.unwrap() < 1e-6, "{} {:?}", t.id, c.scaling_error);
        }
    }
}
