//! Verification suites. Each writes its tables and a JSON verdict file and
//! returns the same verdicts.

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use collective_core::ez_bsde::{check_error_bound, convergence_in_m, solve_truncated, BsdeOptions, TruncatedDriver};
use collective_core::heterogeneous::{
    check_axiom_fairness, check_axiom_monotone, check_axiom_performance, pareto_audit, sample_realisation, value_vs_budget_curve,
    AuditOptions, BasicScheme, InvestorType, ProRataPoolScheme, UnequalPayScheme, Verdict, WastefulScheme,
};
use collective_core::market::{Lattice, MarketModel, NodeField};
use collective_core::mortality::{check_time_point_bound, MortalityLaw, MortalityTable};
use collective_core::optimizer::{
    annuity_consumption, annuity_value, convergence_study, solve_finite_sizes, solve_infinite_dp, solve_martingale,
    transfer_infinite_to_finite, CollectiveSize, HomogeneousProblem, KktOptions,
};
use collective_core::preferences::{ez_utility_discrete, EzParams, GainFunction, LatticeChain, Utility, VnmParams};
use collective_core::rng::stream;
use collective_core::TimeGrid;
use rand::Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, FundConfig};
use crate::output::Sink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Monotone,
    Annuity,
    Convergence,
    Axioms,
    Pareto,
    Bsde,
    Market,
}

pub const ALL: [Suite; 7] = [Suite::Monotone, Suite::Annuity, Suite::Convergence, Suite::Axioms, Suite::Pareto, Suite::Bsde, Suite::Market];

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Monotone => "monotone",
            Suite::Annuity => "annuity",
            Suite::Convergence => "convergence",
            Suite::Axioms => "axioms",
            Suite::Pareto => "pareto",
            Suite::Bsde => "bsde",
            Suite::Market => "market",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL.iter().copied().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = ALL.iter().map(|x| x.name()).collect();
            anyhow!("unknown suite `{s}`; expected one of {} or all", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self { suite, passed: true, checks: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!("[{}] {}/{}: {}\n", if c.passed { "pass" } else { "FAIL" }, self.suite, c.name, c.detail));
        }
        s.push_str(&format!("{} {}\n", self.suite, if self.passed { "passed" } else { "FAILED" }));
        s
    }
}

pub fn run(suite: Suite, cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let report = match suite {
        Suite::Monotone => monotone(cfg, sink)?,
        Suite::Annuity => annuity(cfg, sink)?,
        Suite::Convergence => convergence(cfg, sink)?,
        Suite::Axioms => axioms(cfg, sink)?,
        Suite::Pareto => pareto(cfg, sink)?,
        Suite::Bsde => bsde(cfg, sink)?,
        Suite::Market => market(cfg, sink)?,
    };
    sink.json(&format!("{suite}.json"), &report)?;
    Ok(report)
}

/// Runs suites on scoped threads; reports come back in the order given.
pub fn run_many(suites: &[Suite], cfg: &ExperimentConfig, sink: &Sink) -> Vec<Result<SuiteReport>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = suites.iter().map(|&suite| s.spawn(move || run(suite, cfg, sink))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("suite thread panicked")))).collect()
    })
}

fn label(f: &FundConfig) -> String {
    format!("{}-{}", f.preferences, f.mortality)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[derive(Serialize)]
struct ValueRow {
    fund: String,
    size: String,
    value: f64,
    gap: f64,
    benefit_ratio: Option<f64>,
}

fn monotone(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Monotone);
    let tol = cfg.run.tolerance;
    let mut rows = Vec::new();
    for f in &cfg.funds {
        let p = cfg.problem(f, CollectiveSize::Infinite)?;
        let mut sizes = cfg.run.sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let finite = solve_finite_sizes(&p, &sizes, &cfg.run.dp)?;
        let inf = solve_infinite_dp(&p, &cfg.run.dp)?.value;
        let worst = finite.windows(2).map(|w| w[1].value - w[0].value).fold(f64::INFINITY, f64::min);
        for (&n, r) in sizes.iter().zip(&finite) {
            rows.push(ValueRow { fund: label(f), size: n.to_string(), value: r.value, gap: inf - r.value, benefit_ratio: None });
        }
        rows.push(ValueRow { fund: label(f), size: "inf".into(), value: inf, gap: 0.0, benefit_ratio: None });
        let last = finite.last().map(|r| r.value).unwrap_or(f64::NEG_INFINITY);
        let worst = if worst.is_finite() { worst } else { 0.0 };
        rep.check(
            format!("{}: v_n nondecreasing", label(f)),
            worst >= -tol,
            format!("sizes {sizes:?}, smallest increment {worst:.3e}, tolerance {tol:.0e}"),
        );
        rep.check(
            format!("{}: v_n below v_inf", label(f)),
            last <= inf + tol.max(1e-9 * inf.abs()),
            format!("v_{} = {last:.10}, v_inf = {inf:.10}", sizes.last().unwrap()),
        );
    }
    sink.csv("monotone_values.csv", &rows)?;
    Ok(rep)
}

/// Market with zero rate and zero drifts, keeping the volatilities; one
/// risky asset with volatility 0.2 when the config has none.
fn neutral_market(cfg: &ExperimentConfig, drift: f64) -> Result<MarketModel> {
    let vols: Vec<f64> = cfg.market.assets.iter().map(|a| a.volatility).filter(|v| *v > 0.0).collect();
    let vol = vols.first().copied().unwrap_or(0.2);
    Ok(MarketModel::single(0.0, drift, vol)?)
}

#[derive(Serialize)]
struct AnnuityRow {
    case: String,
    infinite_value: f64,
    annuity_value: f64,
    gap: f64,
    consumption_spread: f64,
}

fn annuity(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Annuity);
    let fund = cfg
        .funds
        .iter()
        .find(|f| matches!(cfg.preferences.get(&f.preferences), Some(GainFunction::Vnm(_))))
        .ok_or_else(|| anyhow!("the annuity suite needs a von Neumann–Morgenstern fund"))?;
    let utility = match cfg.gain(&fund.preferences)? {
        GainFunction::Vnm(p) => p.utility,
        _ => unreachable!(),
    };
    let table = cfg.table(&fund.mortality)?;
    let make = |discount: f64, drift: f64| -> Result<HomogeneousProblem> {
        Ok(HomogeneousProblem::new(
            GainFunction::Vnm(VnmParams::new(utility.clone(), discount)?),
            table.clone(),
            neutral_market(cfg, drift)?,
            fund.budget,
            CollectiveSize::Infinite,
        )?)
    };
    let mut rows = Vec::new();
    let base = make(0.0, 0.0)?;
    let sol = solve_martingale(&base, &KktOptions::default())?;
    let c = sol.consumption.as_slice();
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    let spread = c.iter().map(|x| (x / mean - 1.0).abs()).fold(0.0, f64::max);
    let annuity = annuity_consumption(&base);
    let dp = solve_infinite_dp(&base, &cfg.run.dp)?.value;
    let av = annuity_value(&base)?;
    rep.check("optimal consumption is constant", spread <= 1e-6, format!("largest relative deviation {spread:.3e}"));
    rep.check(
        "constant equals the annuity X0 / sum pi dt",
        rel(mean, annuity) <= 1e-6,
        format!("solver {mean:.12}, annuity {annuity:.12}"),
    );
    rep.check("annuity attains v_inf", rel(dp, av) <= 1e-6, format!("v_inf {dp:.12}, annuity value {av:.12}"));
    rows.push(AnnuityRow { case: "b=0,r=0,mu=0".into(), infinite_value: dp, annuity_value: av, gap: dp - av, consumption_spread: spread });
    for (case, p) in [("b=0.05", make(0.05, 0.0)?), ("mu=0.04", make(0.0, 0.04)?)] {
        let v = solve_infinite_dp(&p, &cfg.run.dp)?.value;
        let a = annuity_value(&p)?;
        let sol = solve_martingale(&p, &KktOptions::default())?;
        let c = sol.consumption.as_slice();
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let spread = c.iter().map(|x| (x / m - 1.0).abs()).fold(0.0, f64::max);
        rep.check(format!("{case}: annuity is strictly suboptimal"), v - a > 1e-4, format!("v_inf - annuity = {:.6e}", v - a));
        rows.push(AnnuityRow { case: case.into(), infinite_value: v, annuity_value: a, gap: v - a, consumption_spread: spread });
    }
    sink.csv("annuity.csv", &rows)?;
    Ok(rep)
}

#[derive(Serialize)]
struct TransferRow {
    fund: String,
    n: u64,
    lambda: f64,
    gain: f64,
    limit_gain: f64,
    bound_probability: f64,
    paths: u64,
    violations: u64,
    bound_failures: u64,
    min_wealth: f64,
}

fn convergence(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Convergence);
    let run = &cfg.run;
    let mut gap_rows = Vec::new();
    let mut transfer_rows = Vec::new();
    for f in &cfg.funds {
        let p = cfg.problem(f, CollectiveSize::Infinite)?;
        let mut sizes = run.sizes.clone();
        sizes.push(run.benefit_size);
        let table = convergence_study(&p, &sizes, &run.dp)?;
        for r in &table.rows {
            gap_rows.push(ValueRow { fund: label(f), size: r.n.to_string(), value: r.value, gap: r.gap, benefit_ratio: r.benefit_ratio });
        }
        rep.check(
            format!("{}: gap to v_inf nonincreasing", label(f)),
            table.gaps_nonincreasing(run.tolerance) && table.rows.iter().all(|r| r.gap >= -run.tolerance),
            format!("gaps {}", table.rows.iter().map(|r| format!("{}:{:.3e}", r.n, r.gap)).collect::<Vec<_>>().join(" ")),
        );
        let ratio = table.rows.iter().find(|r| r.n == run.benefit_size).and_then(|r| r.benefit_ratio);
        rep.check(
            format!("{}: benefit ratio at n = {}", label(f), run.benefit_size),
            ratio.is_some_and(|r| r >= run.benefit_floor),
            format!("(v_n - v_1) / (v_inf - v_1) = {}, floor {}", ratio.map_or("n/a".into(), |r| format!("{r:.4}")), run.benefit_floor),
        );
        if !p.gain.zero_consumption_is_finite() {
            continue;
        }
        let gamma = solve_martingale(&p, &KktOptions::default())?.consumption;
        let mut results = Vec::new();
        for &n in &run.transfer_sizes {
            let r = transfer_infinite_to_finite(&p, &gamma, run.lambda, n, run.paths, run.seed)?;
            transfer_rows.push(TransferRow {
                fund: label(f),
                n,
                lambda: r.lambda,
                gain: r.gain,
                limit_gain: r.limit_gain,
                bound_probability: r.bound_probability,
                paths: r.audit.paths,
                violations: r.audit.violations,
                bound_failures: r.audit.bound_failures,
                min_wealth: r.audit.min_wealth,
            });
            results.push(r);
        }
        let increasing = results.windows(2).all(|w| w[1].gain >= w[0].gain - run.tolerance);
        let below = results.iter().all(|r| r.gain <= r.limit_gain + run.tolerance);
        let detail = results.iter().map(|r| format!("n={}:{:.8}", r.n, r.gain)).collect::<Vec<_>>().join(" ");
        let limit = results.first().map_or(f64::NAN, |r| r.limit_gain);
        rep.check(
            format!("{}: transferred gains increase toward gain(lambda gamma)", label(f)),
            increasing && below,
            format!("{detail}, limit {limit:.8}"),
        );
        let violations: u64 = results.iter().map(|r| r.audit.violations).sum();
        let paths: u64 = results.iter().map(|r| r.audit.paths).sum();
        rep.check(format!("{}: transfer admissibility", label(f)), violations == 0, format!("{violations} violations over {paths} paths"));
    }
    sink.csv("convergence_gaps.csv", &gap_rows)?;
    sink.csv("convergence_transfer.csv", &transfer_rows)?;
    Ok(rep)
}

#[derive(Serialize)]
struct AxiomRow {
    axiom: String,
    scheme: String,
    passed: bool,
    violations: usize,
    first_violation: String,
}

fn axioms(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Axioms);
    let (types, weights) = cfg.types()?;
    let market = cfg.market.build()?;
    let run = &cfg.run;
    let basic = BasicScheme { market: market.clone(), options: run.dp };
    let mut sizes: Vec<u64> = run.population_sizes.iter().map(|n| n * weights.lcm()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let n_small = *sizes.first().ok_or_else(|| anyhow!("run.population_sizes is empty"))?;
    let n_large = *sizes.last().unwrap();
    let mut rows = Vec::new();
    let mut record = |r: &collective_core::heterogeneous::AxiomReport| {
        rows.push(AxiomRow {
            axiom: r.axiom.clone(),
            scheme: r.scheme.clone(),
            passed: r.passed,
            violations: r.violations.len(),
            first_violation: r.violations.first().cloned().unwrap_or_default(),
        })
    };

    let small = sample_realisation(&weights, &types, n_small, &market, run.seed)?;
    let large = sample_realisation(&weights, &types, n_large, &market, run.seed)?;
    let perms = run.permutations as usize;
    let i1a = check_axiom_fairness(&basic, &weights, &types, &small, perms, run.seed)?;
    let i1b = check_axiom_fairness(&basic, &weights, &types, &large, perms, run.seed)?;
    record(&i1a);
    record(&i1b);
    rep.check("I1 basic scheme", i1a.passed && i1b.passed, format!("n = {n_small} and n = {n_large}, exhaustive up to 6, else {perms} sampled permutations"));
    let (i2, gains) = check_axiom_monotone(&basic, &weights, &types, &sizes, 0.0)?;
    record(&i2);
    rep.check(
        "I2 basic scheme",
        i2.passed,
        format!("sizes {sizes:?}, gains {}", gains.iter().map(|g| format!("{}:{:?}", g.n, g.gains)).collect::<Vec<_>>().join(" ")),
    );
    let i3 = check_axiom_performance(&basic, &weights, &types, n_large, &market, &run.dp, 0.0)?;
    record(&i3);
    rep.check("I3 basic scheme", i3.passed, format!("n = {n_large}, exact comparison"));

    let unequal = UnequalPayScheme { base: basic.clone(), bonus: 0.1 };
    let r = check_axiom_fairness(&unequal, &weights, &types, &large, perms, run.seed)?;
    record(&r);
    rep.check("I1 planted unequal pay detected", !r.passed, r.violations.first().cloned().unwrap_or_else(|| "not detected".into()));
    let wasteful = WastefulScheme { base: basic.clone(), from: sizes[sizes.len() / 2], waste: 0.3 };
    let (r, _) = check_axiom_monotone(&wasteful, &weights, &types, &sizes, run.tolerance)?;
    record(&r);
    rep.check("I2 planted waste detected", !r.passed, r.violations.first().cloned().unwrap_or_else(|| "not detected".into()));
    let r = check_axiom_performance(&ProRataPoolScheme, &weights, &types, n_large, &market, &run.dp, run.tolerance)?;
    record(&r);
    rep.check("I3 planted pro-rata pooling detected", !r.passed, r.violations.first().cloned().unwrap_or_else(|| "not detected".into()));
    sink.csv("axioms.csv", &rows)?;
    Ok(rep)
}

#[derive(Serialize)]
struct AuditCsvRow {
    case: String,
    id: String,
    weight: f64,
    cost: f64,
    budget: f64,
    gain: f64,
    infinite_value: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct CurveRow {
    investor: String,
    budget_low: f64,
    budget_high: f64,
    midpoint_gap: f64,
}

fn pareto(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Pareto);
    let (types, weights) = cfg.types()?;
    let market = cfg.market.build()?;
    let run = &cfg.run;
    let opts = AuditOptions::default();
    let flows = |budget: &dyn Fn(usize, f64) -> f64| -> Result<Vec<NodeField>> {
        types
            .iter()
            .enumerate()
            .map(|(z, t)| {
                let p = InvestorType { budget: budget(z, t.budget), ..t.clone() }.problem(&market, CollectiveSize::Infinite)?;
                Ok(solve_martingale(&p, &KktOptions::default())?.consumption)
            })
            .collect()
    };
    let mut rows = Vec::new();
    let mut push = |case: &str, a: &collective_core::heterogeneous::ParetoAudit| {
        for r in &a.rows {
            rows.push(AuditCsvRow {
                case: case.into(),
                id: r.id.clone(),
                weight: r.weight,
                cost: r.cost,
                budget: r.budget,
                gain: r.gain,
                infinite_value: r.infinite_value,
                verdict: r.verdict,
            });
        }
    };
    let basic = pareto_audit(&flows(&|_, b| b)?, &weights, &types, &market, &run.dp, &opts)?;
    push("basic", &basic);
    let err = (basic.total_cost - basic.total_budget).abs();
    rep.check(
        "budget identity on basic-scheme cashflows",
        basic.budget_identity && err <= 1e-8,
        format!("cost {:.12}, budget {:.12}, |difference| {err:.3e}", basic.total_cost, basic.total_budget),
    );
    rep.check(
        "basic-scheme gains match v_inf",
        basic.rows.iter().all(|r| r.verdict == Verdict::Matches),
        basic.rows.iter().map(|r| format!("{}:{}", r.id, r.verdict)).collect::<Vec<_>>().join(" "),
    );
    // Shift budget from the first type to the second without changing the total.
    if types.len() >= 2 {
        let (w0, w1) = (weights.weight(0), weights.weight(1));
        let shift = 0.1 * types[0].budget;
        let moved = pareto_audit(
            &flows(&|z, b| match z {
                0 => b - shift,
                1 => b + shift * w0 / w1,
                _ => b,
            })?,
            &weights,
            &types,
            &market,
            &run.dp,
            &opts,
        )?;
        push("transfer", &moved);
        let expected = (types[1].id.clone(), types[0].id.clone());
        rep.check(
            "planted budget transfer named",
            moved.budget_identity && !moved.free_lunch && moved.peter_paul.contains(&expected),
            format!("peter_paul {:?}", moved.peter_paul),
        );
        let lunch = pareto_audit(&flows(&|z, b| if z == 0 { 1.2 * b } else { b })?, &weights, &types, &market, &run.dp, &opts)?;
        push("overspend", &lunch);
        rep.check(
            "planted overspend flagged",
            !lunch.budget_identity && lunch.free_lunch,
            format!("cost {:.6} over budget {:.6}", lunch.total_cost, lunch.total_budget),
        );
    }
    sink.csv("pareto_audit.csv", &rows)?;

    let mut curves = Vec::new();
    let mut investors: Vec<InvestorType> = Vec::new();
    for f in &cfg.funds {
        investors.push(InvestorType::new(label(f), 1.0, cfg.table(&f.mortality)?, cfg.gain(&f.preferences)?)?);
    }
    for inv in &investors {
        let c = value_vs_budget_curve(inv, &market, &run.budgets, &run.dp, run.tolerance)?;
        for g in &c.midpoint_gaps {
            curves.push(CurveRow { investor: inv.id.clone(), budget_low: g.0, budget_high: g.1, midpoint_gap: g.2 });
        }
        let worst = c.midpoint_gaps.iter().filter(|g| g.0 != g.1).map(|g| g.2).fold(f64::INFINITY, f64::min);
        rep.check(format!("{}: v(b) midpoint concave", inv.id), c.concave, format!("budgets {:?}, smallest midpoint gap {worst:.3e}", run.budgets));
        if let GainFunction::Vnm(p) = &inv.gain {
            let law = match p.utility {
                Utility::Power { .. } => Some("v(b) = b^alpha v(1)"),
                Utility::Log => Some("v(b) = v(1) + w ln b"),
                _ => None,
            };
            if let Some(law) = law {
                let e = c.scaling_error.unwrap_or(f64::INFINITY);
                rep.check(format!("{}: {law}", inv.id), e <= 1e-6, format!("largest relative error {e:.3e}"));
            }
        }
    }
    sink.csv("budget_curves.csv", &curves)?;
    Ok(rep)
}

fn first_ez(cfg: &ExperimentConfig) -> Result<(EzParams, &FundConfig)> {
    for f in &cfg.funds {
        if let GainFunction::EpsteinZin(p) = cfg.gain(&f.preferences)? {
            return Ok((p, f));
        }
    }
    bail!("bsde suite needs an Epstein–Zin fund")
}

/// Test stream for the scheme comparison, defined on any grid.
fn probe_stream(grid: TimeGrid, adequacy: f64) -> NodeField {
    let dt = grid.step();
    NodeField::from_fn(grid.len(), |i, j| adequacy * (0.8 + 0.6 * j as f64 / (i + 1) as f64 + 0.02 * i as f64 * dt))
}

#[derive(Serialize)]
struct FixedPointRow {
    law: String,
    value: f64,
    target: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct RichardsonRow {
    dt: f64,
    discrete: f64,
    bsde: f64,
    gap: f64,
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct LevelRow {
    level: Option<f64>,
    transformed: f64,
    utility: f64,
}

#[derive(Serialize)]
struct BoundRow {
    n: u64,
    level: f64,
    lhs: f64,
    rhs: f64,
    constant: f64,
    bound_failure: f64,
    holds: bool,
}

#[derive(Serialize)]
struct TimePointRow {
    n: u64,
    eps: f64,
    points: String,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    rhs_se: f64,
}

fn bsde(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Bsde);
    let run = &cfg.run;
    let (ez, fund) = first_ez(cfg)?;
    let grid = cfg.time_grid()?;
    let problem = cfg.problem(fund, CollectiveSize::Infinite)?;
    let lattice = problem.lattice()?;
    let loose = BsdeOptions { require_contraction: false, ..BsdeOptions::default() };

    // Adequacy fixed point across mortality laws.
    let mut laws: Vec<(String, MortalityLaw)> = cfg.mortality.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let m = grid.len();
    laws.push(("uniform".into(), MortalityLaw::Uniform));
    laws.push(("point_mass".into(), MortalityLaw::PointMass { time: grid.time(m / 2) }));
    let ramp: Vec<f64> = (0..m).map(|i| (i + 1) as f64).collect();
    let total: f64 = ramp.iter().sum::<f64>() * grid.step();
    laws.push(("ramp".into(), MortalityLaw::Explicit { density: ramp.iter().map(|x| x / total).collect() }));
    laws.push(("no_early_deaths".into(), MortalityLaw::PointMass { time: grid.time(m - 1) }));
    let mut fp_rows = Vec::new();
    let target = ez.terminal();
    let flat = NodeField::from_fn(m, |_, _| ez.adequacy);
    for (name, law) in &laws {
        let t = MortalityTable::new(law, grid)?;
        let v = ez_utility_discrete(&ez, &flat, &t, &lattice)?;
        fp_rows.push(FixedPointRow { law: name.clone(), value: v, target, relative_error: rel(v, target) });
    }
    let worst = fp_rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    rep.check(
        "adequacy is a fixed point",
        fp_rows.len() >= 5 && worst <= 1e-8,
        format!("{} laws, largest relative error {worst:.3e}", fp_rows.len()),
    );
    sink.csv("bsde_fixed_point.csv", &fp_rows)?;

    // Scheme consistency under step halving.
    let table_law = cfg.mortality[&fund.mortality].clone();
    let horizon = grid.horizon();
    let mut rich = Vec::new();
    let mut prev: Option<f64> = None;
    for k in 0..4 {
        let dt = horizon / (40.0 * f64::from(1u32 << k));
        let g = TimeGrid::new(dt, horizon)?;
        let t = MortalityTable::new(&table_law, g)?;
        let lat = HomogeneousProblem { grid: g, table: t.clone(), ..problem.clone() }.lattice()?;
        let gamma = probe_stream(g, ez.adequacy);
        let discrete = ez_utility_discrete(&ez, &gamma, &t, &lat)?;
        let sol = solve_truncated(&TruncatedDriver::new(ez, f64::INFINITY)?, &LatticeChain::new(&lat, &t, &gamma)?, &loose)?;
        let bsde = sol.utility(&ez);
        let gap = (bsde - discrete).abs();
        rich.push(RichardsonRow { dt, discrete, bsde, gap, ratio: prev.map(|p| p / gap) });
        prev = Some(gap);
    }
    let ratios: Vec<f64> = rich.iter().filter_map(|r| r.ratio).collect();
    rep.check(
        "discrete and BSDE values agree to O(dt)",
        ratios.iter().all(|r| (1.7..=2.3).contains(r)),
        format!("gap halving ratios {}", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")),
    );
    sink.csv("bsde_richardson.csv", &rich)?;

    // Truncation levels on the transfer stream.
    let gamma = solve_martingale(&problem, &KktOptions::default())?.consumption;
    let levels: Vec<f64> = run.levels.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
    let tt = convergence_in_m(&ez, &gamma.scale(run.lambda), &problem.table, &lattice, &levels, &loose)?;
    let rows: Vec<LevelRow> = tt
        .rows
        .iter()
        .map(|r| LevelRow { level: r.level.is_finite().then_some(r.level), transformed: r.transformed, utility: r.utility })
        .collect();
    let nonneg = tt.rows.iter().all(|r| r.transformed >= 0.0);
    rep.check(
        "Vt^m_0 nonincreasing and EZ^m nondecreasing in m",
        tt.monotone(run.tolerance) && nonneg,
        rows.iter().map(|r| format!("{}:{:.8}", r.level.map_or("inf".into(), |l| l.to_string()), r.utility)).collect::<Vec<_>>().join(" "),
    );
    let last = tt.rows.last().map_or(f64::NAN, |r| r.utility);
    let untruncated = solve_truncated(&TruncatedDriver::new(ez, f64::INFINITY)?, &LatticeChain::new(&lattice, &problem.table, &gamma.scale(run.lambda))?, &loose)?
        .utility(&ez);
    rep.check(
        "EZ^m reaches the untruncated value",
        rel(last, untruncated) <= 1e-10,
        format!("largest level {last:.10}, untruncated {untruncated:.10}, discrete {:.10}", tt.limit),
    );
    sink.csv("bsde_truncation.csv", &rows)?;

    // Error bound on the transfer streams, finite levels only.
    let delta = cfg.delta();
    let mut bounds = Vec::new();
    for &n in &run.transfer_sizes {
        for &level in levels.iter().filter(|l| l.is_finite()) {
            let b = check_error_bound(&ez, &gamma, &problem.table, &lattice, run.lambda, n, level, delta, &loose)?;
            bounds.push(BoundRow { n, level, lhs: b.lhs, rhs: b.rhs, constant: b.constant, bound_failure: b.bound_failure, holds: b.holds });
        }
    }
    let failed: Vec<String> = bounds.iter().filter(|b| !b.holds).map(|b| format!("n={} m={}", b.n, b.level)).collect();
    let tightest = bounds.iter().map(|b| b.lhs / b.rhs).fold(0.0, f64::max);
    rep.check(
        "error bound holds",
        !bounds.is_empty() && failed.is_empty(),
        if failed.is_empty() { format!("{} cases, largest lhs/rhs {tightest:.3e}, delta {delta}", bounds.len()) } else { format!("fails at {}", failed.join(", ")) },
    );
    sink.csv("bsde_error_bound.csv", &bounds)?;

    // Finite time points on a uniform table.
    let uniform = MortalityTable::new(&MortalityLaw::Uniform, grid)?;
    let mut tp = Vec::new();
    for eps in [0.3, 0.5] {
        for n in [10, 100] {
            let b = check_time_point_bound(n, &uniform, m - 1, eps, run.trials, run.seed)?;
            tp.push(TimePointRow {
                n,
                eps,
                points: b.points.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "),
                lhs: b.lhs,
                lhs_se: b.lhs_se,
                rhs: b.rhs,
                rhs_se: b.rhs_se,
            });
            rep.check(
                format!("finite time points eps={eps} n={n}"),
                !b.violation,
                format!("lhs {:.5} ± {:.1e}, rhs {:.5} ± {:.1e}, {} trials", b.lhs, b.lhs_se, b.rhs, b.rhs_se, run.trials),
            );
        }
    }
    sink.csv("bsde_time_points.csv", &tp)?;
    Ok(rep)
}

#[derive(Serialize)]
struct KernelRow {
    identity: String,
    max_error: f64,
}

fn market(cfg: &ExperimentConfig, sink: &Sink) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Market);
    let fund = cfg.funds.first().ok_or_else(|| anyhow!("config has no funds"))?;
    let lattice: Lattice = cfg.problem(fund, CollectiveSize::Infinite)?.lattice()?;
    let m = lattice.levels();
    let dt = lattice.grid().step();
    let (q, g) = (lattice.q_up(), lattice.bond_growth());
    let mut rows = Vec::new();

    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..=i {
            let s = lattice.risky_price(i, j);
            let next = q * lattice.risky_price(i + 1, j + 1) + (1.0 - q) * lattice.risky_price(i + 1, j);
            worst = worst.max((next / g - s).abs() / s);
        }
    }
    rep.check("discounted risky price is a Q-martingale at every node", worst <= 1e-13, format!("largest relative error {worst:.3e}"));
    rows.push(KernelRow { identity: "q_martingale".into(), max_error: worst });

    // Call on the last consumption level, paid as a rate over one step.
    let strike = lattice.risky_price(0, 0);
    let last = m - 1;
    let call = NodeField::from_fn(m, |i, j| if i == last { (lattice.risky_price(i, j) - strike).max(0.0) / dt } else { 0.0 });
    let mut v: Vec<f64> = (0..=last).map(|j| call.get(last, j) * dt).collect();
    for i in (0..last).rev() {
        v = (0..=i).map(|j| (q * v[j + 1] + (1.0 - q) * v[j]) / g).collect();
    }
    let backward = v[0];
    let repl = lattice.replicate(&call)?;
    let priced = lattice.q_price(&call)?;
    let mut sf: f64 = 0.0;
    for i in 0..last {
        for j in 0..=i {
            for child in [j, j + 1] {
                let held = repl.risky_units.get(i, j) * lattice.risky_price(i + 1, child) + repl.bond_units.get(i, j) * lattice.bond_price(i + 1);
                sf = sf.max((held - repl.pre.get(i + 1, child)).abs());
            }
        }
    }
    let err = rel(repl.initial_budget, backward).max(rel(priced, backward));
    rep.check(
        "call replication matches backward induction",
        err <= 1e-12 && sf <= 1e-12 * backward.max(1.0),
        format!("value {backward:.15}, relative error {err:.3e}, largest self-financing residual {sf:.3e}"),
    );
    rows.push(KernelRow { identity: "call_replication".into(), max_error: err.max(sf) });

    let mut rng = stream(cfg.run.seed, "market_kernel", 0);
    let mut add: f64 = 0.0;
    for _ in 0..20 {
        let a = NodeField::from_fn(m, |_, _| rng.random::<f64>() * 2.0);
        let b = NodeField::from_fn(m, |_, _| rng.random::<f64>() * 2.0);
        let k: f64 = rng.random::<f64>() * 3.0;
        let sum = lattice.q_price(&a.add(&b.scale(k)))?;
        let parts = lattice.q_price(&a)? + k * lattice.q_price(&b)?;
        add = add.max(rel(sum, parts));
    }
    rep.check("price is additive", add <= 1e-13, format!("largest relative error {add:.3e} over 20 random pairs"));
    rows.push(KernelRow { identity: "additivity".into(), max_error: add });
    sink.csv("market_kernel.csv", &rows)?;
    Ok(rep)
}
