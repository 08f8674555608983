//! Subcommand bodies, shared by the binary and the integration tests.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use collective_core::ez_bsde::{convergence_in_m, BsdeOptions};
use collective_core::fund::{evolve_finite, evolve_infinite, Decision, FundState, FundTrajectory, MarketPath, Strategy};
use collective_core::heterogeneous::{
    check_axiom_fairness, check_axiom_monotone, check_axiom_performance, sample_realisation, AxiomReport, BasicScheme, ManagementScheme,
    ProRataPoolScheme, UnequalPayScheme, WastefulScheme,
};
use collective_core::mortality::simulate_survivors_indexed;
use collective_core::optimizer::{
    annuity_consumption, annuity_value, audit_transfer, convergence_study, cross_check_infinite, solve_finite_sizes, solve_martingale,
    CollectiveSize, HomogeneousProblem, KktOptions, PolicyStrategy,
};
use collective_core::preferences::GainFunction;
use collective_core::rng::{stream, streams};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FundConfig, LoadedConfig};
use crate::output::Sink;
use crate::suites::{self, Suite, SuiteReport};

/// Command-line overrides applied on top of the config's run section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub tolerance: Option<f64>,
}

pub fn apply(mut cfg: ExperimentConfig, o: &Overrides) -> ExperimentConfig {
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = o.trials {
        cfg.run.trials = t;
        cfg.run.paths = t;
    }
    if let Some(t) = o.tolerance {
        cfg.run.tolerance = t;
    }
    cfg
}

fn label(f: &FundConfig) -> String {
    format!("{}-{}", f.preferences, f.mortality)
}

#[derive(Serialize)]
struct SolveRow {
    fund: String,
    size: String,
    value: f64,
    method: String,
}

#[derive(Serialize)]
struct FundSolution {
    fund: String,
    finite: Vec<(u64, f64)>,
    infinite_dp: f64,
    infinite_martingale: f64,
    relative_disagreement: f64,
    annuity_consumption: f64,
    annuity_value: f64,
}

#[derive(Serialize)]
struct SolveReport {
    command: &'static str,
    funds: Vec<FundSolution>,
}

pub fn solve(cfg: &ExperimentConfig, sink: &Sink) -> Result<()> {
    let mut funds = Vec::new();
    let mut rows = Vec::new();
    for f in &cfg.funds {
        let p = cfg.problem(f, CollectiveSize::Infinite)?;
        let mut sizes = cfg.run.sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let finite = solve_finite_sizes(&p, &sizes, &cfg.run.dp)?;
        let (dp, mg, disagreement) = cross_check_infinite(&p, &cfg.run.dp)?;
        for (&n, r) in sizes.iter().zip(&finite) {
            rows.push(SolveRow { fund: label(f), size: n.to_string(), value: r.value, method: "dp".into() });
        }
        rows.push(SolveRow { fund: label(f), size: "inf".into(), value: dp.value, method: "dp".into() });
        rows.push(SolveRow { fund: label(f), size: "inf".into(), value: mg.value, method: "martingale".into() });
        funds.push(FundSolution {
            fund: label(f),
            finite: sizes.iter().copied().zip(finite.iter().map(|r| r.value)).collect(),
            infinite_dp: dp.value,
            infinite_martingale: mg.value,
            relative_disagreement: disagreement,
            annuity_consumption: annuity_consumption(&p),
            annuity_value: annuity_value(&p)?,
        });
    }
    sink.csv("solve_values.csv", &rows)?;
    sink.json("solve.json", &SolveReport { command: "solve", funds })?;
    Ok(())
}

/// A user-supplied deterministic schedule: consumption rate per survivor at
/// each grid point and a constant risky fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub consumption: Vec<f64>,
    #[serde(default)]
    pub risky_fraction: f64,
}

struct Schedule {
    consumption: Vec<f64>,
    allocation: Vec<f64>,
}

impl Strategy for Schedule {
    fn decide(&self, state: &FundState) -> Decision {
        Decision { consumption: self.consumption[state.t], allocation: self.allocation.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StrategyKind {
    /// Consume nothing, hold only the bond.
    Zero,
    /// Constant annuity rate, bond only.
    Annuity,
    /// The solver's optimal policy.
    Optimal,
    /// The infinite-collective optimum moved to a finite collective.
    Transfer,
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub strategy: Option<StrategyKind>,
    pub strategy_file: Option<std::path::PathBuf>,
    pub fund: usize,
    /// Finite collective size; infinite when absent.
    pub size: Option<u64>,
    /// Paths written to the trajectory CSV.
    pub keep: usize,
}

#[derive(Serialize)]
struct TrajectoryRow {
    path: u64,
    t: f64,
    survivors: Option<u64>,
    alive: f64,
    pre: f64,
    post: f64,
    discounted_pre: f64,
    consumption: f64,
}

#[derive(Serialize)]
struct SimulationSummary {
    command: &'static str,
    fund: String,
    strategy: String,
    size: Option<u64>,
    paths: u64,
    admissible_paths: u64,
    admissibility_rate: f64,
    terminal_mean: f64,
    terminal_min: f64,
    terminal_max: f64,
    min_wealth: f64,
    bound_failures: Option<u64>,
}

pub fn simulate(cfg: &ExperimentConfig, sink: &Sink, args: &SimulateArgs) -> Result<()> {
    let f = cfg.funds.get(args.fund).ok_or_else(|| anyhow!("fund index {} out of {}", args.fund, cfg.funds.len()))?;
    let size = args.size.map_or(CollectiveSize::Infinite, CollectiveSize::Finite);
    let p = cfg.problem(f, size)?;
    let lattice = p.lattice()?;
    let grid = p.grid;
    let paths = cfg.run.paths;
    let seed = cfg.run.seed;
    let risky = p.market.risky_count().max(1);

    let (name, strategy): (String, Option<Box<dyn Strategy>>) = match (&args.strategy_file, args.strategy) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("strategy file {} is missing or unreadable", path.display()))?;
            let s: ScheduleFile = serde_json::from_str(&text).with_context(|| format!("parsing strategy file {}", path.display()))?;
            if s.consumption.len() != grid.len() {
                bail!("strategy file has {} consumption rates, the grid has {} points", s.consumption.len(), grid.len());
            }
            let mut allocation = vec![0.0; risky];
            allocation[0] = s.risky_fraction;
            (path.display().to_string(), Some(Box::new(Schedule { consumption: s.consumption, allocation })))
        }
        (None, Some(StrategyKind::Zero)) => ("zero".into(), Some(Box::new(Schedule { consumption: vec![0.0; grid.len()], allocation: vec![0.0; risky] }))),
        (None, Some(StrategyKind::Annuity)) => {
            let c = annuity_consumption(&p);
            ("annuity".into(), Some(Box::new(Schedule { consumption: vec![c; grid.len()], allocation: vec![0.0; risky] })))
        }
        (None, Some(StrategyKind::Optimal)) => ("optimal".into(), None),
        (None, Some(StrategyKind::Transfer)) => ("transfer".into(), None),
        (None, None) => bail!("give --strategy or --strategy-file"),
    };

    if name == "transfer" {
        let n = args.size.ok_or_else(|| anyhow!("the transfer strategy needs --size"))?;
        let inf = p.with_size(CollectiveSize::Infinite);
        let gamma = solve_martingale(&inf, &KktOptions::default())?.consumption;
        let audit = audit_transfer(&inf, &gamma, cfg.run.lambda, n, paths, seed)?;
        let summary = SimulationSummary {
            command: "simulate",
            fund: label(f),
            strategy: name,
            size: Some(n),
            paths,
            admissible_paths: paths - audit.violations,
            admissibility_rate: (paths - audit.violations) as f64 / paths as f64,
            terminal_mean: f64::NAN,
            terminal_min: f64::NAN,
            terminal_max: f64::NAN,
            min_wealth: audit.min_wealth,
            bound_failures: Some(audit.bound_failures),
        };
        sink.json("simulate.json", &summary)?;
        return Ok(());
    }

    let solved;
    let policy_strategy;
    let strategy: &dyn Strategy = match &strategy {
        Some(s) => s.as_ref(),
        None => {
            solved = match size {
                CollectiveSize::Finite(_) => collective_core::optimizer::solve_finite_dp(&p, &cfg.run.dp)?,
                CollectiveSize::Infinite => collective_core::optimizer::solve_infinite(&p, collective_core::optimizer::InfiniteMethod::Dp, &cfg.run.dp)?,
            };
            policy_strategy = PolicyStrategy { policy: &solved.policy, dt: grid.step() };
            &policy_strategy
        }
    };

    let mut rows = Vec::new();
    let (mut ok, mut sum, mut lo, mut hi, mut min_w) = (0u64, 0.0, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for path_id in 0..paths {
        let mut rng = stream(seed, streams::MARKET, path_id);
        let ups = lattice.sample_path(&mut rng);
        let path = MarketPath::from_lattice(&lattice, &ups)?;
        let traj: FundTrajectory = match size {
            CollectiveSize::Finite(n) => {
                let survivors = simulate_survivors_indexed(n, &p.table, seed, path_id)?;
                evolve_finite(strategy, &path, &survivors, &vec![p.budget; n as usize])?
            }
            CollectiveSize::Infinite => evolve_infinite(strategy, &path, &p.table, p.budget)?,
        };
        let scale = match size {
            CollectiveSize::Finite(n) => n as f64,
            CollectiveSize::Infinite => 1.0,
        };
        let terminal = traj.terminal() / scale;
        ok += u64::from(traj.admissible());
        sum += terminal;
        lo = lo.min(terminal);
        hi = hi.max(terminal);
        min_w = traj.pre.iter().chain(&traj.post).fold(min_w, |a, &b| a.min(b / scale));
        if (path_id as usize) < args.keep {
            for t in 0..grid.len() {
                rows.push(TrajectoryRow {
                    path: path_id,
                    t: grid.time(t),
                    survivors: matches!(size, CollectiveSize::Finite(_)).then(|| traj.survivors[t]),
                    alive: traj.alive[t],
                    pre: traj.pre[t] / scale,
                    post: traj.post[t] / scale,
                    discounted_pre: traj.pre[t] / scale / lattice.bond_price(t),
                    consumption: traj.consumption[t],
                });
            }
        }
    }
    sink.csv("simulate_trajectories.csv", &rows)?;
    let summary = SimulationSummary {
        command: "simulate",
        fund: label(f),
        strategy: name,
        size: args.size,
        paths,
        admissible_paths: ok,
        admissibility_rate: ok as f64 / paths as f64,
        terminal_mean: sum / paths as f64,
        terminal_min: lo,
        terminal_max: hi,
        min_wealth: min_w,
        bound_failures: None,
    };
    sink.json("simulate.json", &summary)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SchemeKind {
    Basic,
    UnequalPay,
    Wasteful,
    ProRataPool,
}

#[derive(Serialize)]
struct SchemeAudit {
    command: &'static str,
    scheme: String,
    passed: bool,
    reports: Vec<AxiomReport>,
}

/// Checks I1, I2 and I3 for one scheme; returns whether all hold.
pub fn audit_scheme(cfg: &ExperimentConfig, sink: &Sink, kind: SchemeKind) -> Result<bool> {
    let (types, weights) = cfg.types()?;
    let market = cfg.market.build()?;
    let run = &cfg.run;
    let basic = BasicScheme { market: market.clone(), options: run.dp };
    let mut sizes: Vec<u64> = run.population_sizes.iter().map(|n| n * weights.lcm()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let n = *sizes.last().ok_or_else(|| anyhow!("run.population_sizes is empty"))?;
    let scheme: Box<dyn ManagementScheme> = match kind {
        SchemeKind::Basic => Box::new(basic),
        SchemeKind::UnequalPay => Box::new(UnequalPayScheme { base: basic, bonus: 0.1 }),
        SchemeKind::Wasteful => Box::new(WastefulScheme { base: basic, from: sizes[sizes.len() / 2], waste: 0.3 }),
        SchemeKind::ProRataPool => Box::new(ProRataPoolScheme),
    };
    let real = sample_realisation(&weights, &types, n, &market, run.seed)?;
    let i1 = check_axiom_fairness(scheme.as_ref(), &weights, &types, &real, run.permutations as usize, run.seed)?;
    let (i2, _) = check_axiom_monotone(scheme.as_ref(), &weights, &types, &sizes, run.tolerance)?;
    let i3 = check_axiom_performance(scheme.as_ref(), &weights, &types, n, &market, &run.dp, run.tolerance)?;
    let reports = vec![i1, i2, i3];
    let passed = reports.iter().all(|r| r.passed);
    sink.json("audit_scheme.json", &SchemeAudit { command: "audit-scheme", scheme: scheme.name().to_string(), passed, reports })?;
    Ok(passed)
}

#[derive(Serialize)]
struct StudyRow {
    fund: String,
    n: u64,
    value: f64,
    gap: f64,
    benefit_ratio: Option<f64>,
}

#[derive(Serialize)]
struct LevelRow {
    fund: String,
    m: Option<f64>,
    transformed: f64,
    ez: f64,
}

pub fn convergence(cfg: &ExperimentConfig, sink: &Sink) -> Result<()> {
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for f in &cfg.funds {
        let p: HomogeneousProblem = cfg.problem(f, CollectiveSize::Infinite)?;
        let t = convergence_study(&p, &cfg.run.sizes, &cfg.run.dp)?;
        for r in &t.rows {
            rows.push(StudyRow { fund: label(f), n: r.n, value: r.value, gap: r.gap, benefit_ratio: r.benefit_ratio });
        }
        if let GainFunction::EpsteinZin(ez) = &p.gain {
            let gamma = solve_martingale(&p, &KktOptions::default())?.consumption;
            let ms: Vec<f64> = cfg.run.levels.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
            let opts = BsdeOptions { require_contraction: false, ..BsdeOptions::default() };
            let tt = convergence_in_m(ez, &gamma, &p.table, &p.lattice()?, &ms, &opts)?;
            for r in &tt.rows {
                levels.push(LevelRow { fund: label(f), m: r.level.is_finite().then_some(r.level), transformed: r.transformed, ez: r.utility });
            }
        }
    }
    sink.csv("convergence_study.csv", &rows)?;
    sink.csv("convergence_levels.csv", &levels)?;
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    command: &'static str,
    passed: bool,
    suites: &'a [SuiteReport],
}

/// Runs the suites, writes `verify.json` and returns the reports.
pub fn verify(cfg: &ExperimentConfig, sink: &Sink, which: &[Suite]) -> Result<Vec<SuiteReport>> {
    let reports = suites::run_many(which, cfg, sink).into_iter().collect::<Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| r.passed);
    sink.json("verify.json", &VerifyReport { command: "verify", passed, suites: &reports })?;
    Ok(reports)
}

/// Loads a config and opens the output directory, `--out` first.
pub fn open(config: &Path, out: Option<&Path>, o: &Overrides) -> Result<(LoadedConfig, ExperimentConfig, Sink)> {
    let loaded = crate::config::load(config)?;
    let cfg = apply(loaded.config.clone(), o);
    let dir = match (out, &cfg.output) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(o)) => o.dir.clone(),
        (None, None) => "out".into(),
    };
    let sink = Sink::new(&dir, &loaded.hash, cfg.run.seed)?;
    Ok((loaded, cfg, sink))
}
