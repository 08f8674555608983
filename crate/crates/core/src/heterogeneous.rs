//! Heterogeneous populations: investor types, management schemes and the
//! checks a scheme is audited against.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::fund::{evolve_finite, MarketPath};
use crate::market::{Lattice, MarketModel, NodeField};
use crate::mortality::{MortalityTable, SurvivorPath};
use crate::optimizer::{
    solve_finite_dp, solve_infinite_dp, CollectiveSize, DpOptions, HomogeneousProblem, PolicyStrategy,
};
use crate::preferences::{
    check_concavity, check_monotonicity, check_non_saturation, evaluate, DeterministicChain, GainFunction,
    LatticeChain, Recursion, ShapeReport, Utility,
};
use crate::rng::{stream, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestorType {
    pub id: String,
    pub budget: f64,
    pub table: MortalityTable,
    pub gain: GainFunction,
}

impl InvestorType {
    pub fn new(id: impl Into<String>, budget: f64, table: MortalityTable, gain: GainFunction) -> Result<Self> {
        let t = Self { id: id.into(), budget, table, gain };
        t.validate()?;
        Ok(t)
    }

    /// As [`InvestorType::new`], also sampling concavity, monotonicity and
    /// non-saturation of the gain on the market lattice.
    pub fn new_checked(
        id: impl Into<String>,
        budget: f64,
        table: MortalityTable,
        gain: GainFunction,
        lattice: &Lattice,
        trials: u64,
        seed: u64,
    ) -> Result<Self> {
        let t = Self::new(id, budget, table, gain)?;
        for report in t.shape_reports(lattice, trials, seed)? {
            if !report.passed() {
                return Err(Error::InvalidPreferences(format!(
                    "type {}: {} fails on {} of {} samples",
                    t.id,
                    report.property,
                    report.violations.len(),
                    report.trials
                )));
            }
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Domain { what: "type budget must be positive", value: self.budget });
        }
        self.gain.validate()
    }

    pub fn shape_reports(&self, lattice: &Lattice, trials: u64, seed: u64) -> Result<Vec<ShapeReport>> {
        let tol = 1e-10;
        Ok(vec![
            check_concavity(&self.gain, lattice, &self.table, trials, seed, tol)?,
            check_monotonicity(&self.gain, lattice, &self.table, trials, seed, tol)?,
            check_non_saturation(&self.gain, lattice, &self.table, trials, seed)?,
        ])
    }

    /// Homogeneous problem for a collective of this type.
    pub fn problem(&self, market: &MarketModel, size: CollectiveSize) -> Result<HomogeneousProblem> {
        HomogeneousProblem::new(self.gain.clone(), self.table.clone(), market.clone(), self.budget, size)
    }
}

/// Exact positive rational weights summing to one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PopulationWeights {
    weights: Vec<Ratio<u64>>,
}

impl PopulationWeights {
    pub fn new(weights: Vec<(u64, u64)>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidPopulation("at least one type is required".into()));
        }
        let mut out = Vec::with_capacity(weights.len());
        for (num, den) in weights {
            if num == 0 || den == 0 || num > den {
                return Err(Error::InvalidPopulation(format!("weight {num}/{den} outside (0, 1]")));
            }
            out.push(Ratio::new(num, den));
        }
        let total = out.iter().fold(Ratio::from_integer(0), |a, w| a + w);
        if total != Ratio::from_integer(1) {
            return Err(Error::InvalidPopulation(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights: out })
    }

    /// Parses fractions such as `"1/3"` (or integers).
    pub fn parse(items: &[&str]) -> Result<Self> {
        let parsed: Result<Vec<(u64, u64)>> = items.iter().map(|s| parse_fraction(s)).collect();
        Self::new(parsed?)
    }

    pub fn uniform(types: usize) -> Result<Self> {
        Self::new(vec![(1, types as u64); types])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        *self.weights[i].numer() as f64 / *self.weights[i].denom() as f64
    }

    /// Lowest common multiple of the denominators.
    pub fn lcm(&self) -> u64 {
        self.weights.iter().fold(1, |a, w| num_integer::lcm(a, *w.denom()))
    }

    /// Type counts `n omega` for a population of `n`.
    pub fn counts(&self, n: u64) -> Result<Vec<u64>> {
        let l = self.lcm();
        if n == 0 || n % l != 0 {
            return Err(Error::InvalidPopulation(format!("population {n} is not a positive multiple of lcm {l}")));
        }
        Ok(self.weights.iter().map(|w| (Ratio::from_integer(n) * w).to_integer()).collect())
    }
}

fn parse_fraction(s: &str) -> Result<(u64, u64)> {
    let bad = || Error::InvalidPopulation(format!("cannot parse weight {s:?}"));
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => Ok((s.parse().map_err(|_| bad())?, 1)),
    }
}

impl TryFrom<Vec<String>> for PopulationWeights {
    type Error = Error;

    fn try_from(items: Vec<String>) -> Result<Self> {
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        Self::parse(&refs)
    }
}

impl From<PopulationWeights> for Vec<String> {
    fn from(w: PopulationWeights) -> Self {
        w.weights.iter().map(|r| format!("{}/{}", r.numer(), r.denom())).collect()
    }
}

fn check_types(weights: &PopulationWeights, types: &[InvestorType]) -> Result<()> {
    if weights.len() != types.len() {
        return Err(Error::Shape(format!("{} weights for {} types", weights.len(), types.len())));
    }
    let grid = types[0].table.grid();
    if types.iter().any(|t| t.table.grid() != grid) {
        return Err(Error::Shape("all types must share one time grid".into()));
    }
    types.iter().try_for_each(InvestorType::validate)
}

/// A rule for running a heterogeneous fund.
pub trait ManagementScheme {
    fn name(&self) -> &str;

    /// Gain `a_M(omega, n, zeta)` achieved by each type.
    fn gains(&self, weights: &PopulationWeights, types: &[InvestorType], n: u64) -> Result<Vec<f64>>;

    /// Consumption rate of every individual on one realisation: `population[i]`
    /// is the type of individual `i`, `death[i]` the last grid index it is
    /// alive at.
    fn consumption(
        &self,
        weights: &PopulationWeights,
        types: &[InvestorType],
        population: &[usize],
        death: &[usize],
        path: &MarketPath,
    ) -> Result<Vec<Vec<f64>>>;
}

/// Each type runs its own homogeneous fund of size `n omega`, optimally.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicScheme {
    pub market: MarketModel,
    pub options: DpOptions,
}

impl BasicScheme {
    pub fn new(market: MarketModel) -> Self {
        Self { market, options: DpOptions::default() }
    }
}

fn population_counts(weights: &PopulationWeights, types: &[InvestorType], population: &[usize]) -> Result<Vec<u64>> {
    check_types(weights, types)?;
    let mut counts = vec![0u64; types.len()];
    for &z in population {
        if z >= types.len() {
            return Err(Error::InvalidPopulation(format!("type index {z} out of {}", types.len())));
        }
        counts[z] += 1;
    }
    if counts != weights.counts(population.len() as u64)? {
        return Err(Error::InvalidPopulation(format!("population vector has type counts {counts:?}, weights need otherwise")));
    }
    Ok(counts)
}

impl ManagementScheme for BasicScheme {
    fn name(&self) -> &str {
        "basic"
    }

    fn gains(&self, weights: &PopulationWeights, types: &[InvestorType], n: u64) -> Result<Vec<f64>> {
        check_types(weights, types)?;
        let counts = weights.counts(n)?;
        types
            .iter()
            .zip(counts)
            .map(|(t, c)| Ok(solve_finite_dp(&t.problem(&self.market, CollectiveSize::Finite(c))?, &self.options)?.value))
            .collect()
    }

    fn consumption(
        &self,
        weights: &PopulationWeights,
        types: &[InvestorType],
        population: &[usize],
        death: &[usize],
        path: &MarketPath,
    ) -> Result<Vec<Vec<f64>>> {
        let counts = population_counts(weights, types, population)?;
        if death.len() != population.len() {
            return Err(Error::Shape("one death index per individual".into()));
        }
        let grid = path.grid;
        let m = grid.len();
        let mut out = vec![vec![0.0; m]; population.len()];
        for (z, t) in types.iter().enumerate() {
            let c = counts[z];
            let sol = solve_finite_dp(&t.problem(&self.market, CollectiveSize::Finite(c))?, &self.options)?;
            let members: Vec<usize> = (0..population.len()).filter(|&i| population[i] == z).collect();
            let alive = (0..m).map(|s| members.iter().filter(|&&i| death[i] >= s).count() as u64).collect();
            let survivors = SurvivorPath { initial: c, seed: 0, index: 0, counts: alive };
            let strategy = PolicyStrategy { policy: &sol.policy, dt: grid.step() };
            let traj = evolve_finite(&strategy, path, &survivors, &vec![t.budget; c as usize])?;
            for &i in &members {
                for s in 0..=death[i].min(m - 1) {
                    out[i][s] = traj.consumption[s];
                }
            }
        }
        Ok(out)
    }
}

/// Planted I1 violation: the basic scheme with a bonus for individual 0.
#[derive(Debug, Clone, PartialEq)]
pub struct UnequalPayScheme {
    pub base: BasicScheme,
    pub bonus: f64,
}

impl ManagementScheme for UnequalPayScheme {
    fn name(&self) -> &str {
        "unequal_pay"
    }

    fn gains(&self, weights: &PopulationWeights, types: &[InvestorType], n: u64) -> Result<Vec<f64>> {
        self.base.gains(weights, types, n)
    }

    fn consumption(
        &self,
        weights: &PopulationWeights,
        types: &[InvestorType],
        population: &[usize],
        death: &[usize],
        path: &MarketPath,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = self.base.consumption(weights, types, population, death, path)?;
        if let Some(first) = out.first_mut() {
            for (s, c) in first.iter_mut().enumerate() {
                if s <= death[0] {
                    *c += self.bonus;
                }
            }
        }
        Ok(out)
    }
}

/// Planted I2 violation: the basic scheme, but funds of at least `from`
/// members lose a fraction `waste` of their budget.
#[derive(Debug, Clone, PartialEq)]
pub struct WastefulScheme {
    pub base: BasicScheme,
    pub from: u64,
    pub waste: f64,
}

impl WastefulScheme {
    fn effective(&self, types: &[InvestorType], n: u64) -> Vec<InvestorType> {
        let keep = if n >= self.from { 1.0 - self.waste } else { 1.0 };
        types.iter().map(|t| InvestorType { budget: t.budget * keep, ..t.clone() }).collect()
    }
}

impl ManagementScheme for WastefulScheme {
    fn name(&self) -> &str {
        "wasteful"
    }

    fn gains(&self, weights: &PopulationWeights, types: &[InvestorType], n: u64) -> Result<Vec<f64>> {
        self.base.gains(weights, &self.effective(types, n), n)
    }

    fn consumption(
        &self,
        weights: &PopulationWeights,
        types: &[InvestorType],
        population: &[usize],
        death: &[usize],
        path: &MarketPath,
    ) -> Result<Vec<Vec<f64>>> {
        let eff = self.effective(types, population.len() as u64);
        self.base.consumption(weights, &eff, population, death, path)
    }
}

/// Planted pooling rule: all budgets are pooled and every survivor, of any
/// type, receives the same constant rate, priced at zero interest against
/// the population's expected survival.
#[derive(Debug, Clone, PartialEq)]
pub struct ProRataPoolScheme;

impl ProRataPoolScheme {
    fn rate(weights: &PopulationWeights, types: &[InvestorType]) -> f64 {
        let budget: f64 = types.iter().enumerate().map(|(z, t)| weights.weight(z) * t.budget).sum();
        let life: f64 = types.iter().enumerate().map(|(z, t)| weights.weight(z) * t.table.expected_grid_lifetime()).sum();
        budget / life
    }
}

impl ManagementScheme for ProRataPoolScheme {
    fn name(&self) -> &str {
        "pro_rata_pool"
    }

    fn gains(&self, weights: &PopulationWeights, types: &[InvestorType], n: u64) -> Result<Vec<f64>> {
        check_types(weights, types)?;
        weights.counts(n)?;
        let c = Self::rate(weights, types);
        types
            .iter()
            .map(|t| {
                let stream = vec![c; t.table.grid().len()];
                let chain = DeterministicChain::new(&t.table, &stream)?;
                Ok(evaluate(&Recursion::new(&t.gain, t.table.grid().step()), &chain))
            })
            .collect()
    }

    fn consumption(
        &self,
        weights: &PopulationWeights,
        types: &[InvestorType],
        population: &[usize],
        death: &[usize],
        path: &MarketPath,
    ) -> Result<Vec<Vec<f64>>> {
        population_counts(weights, types, population)?;
        let c = Self::rate(weights, types);
        let m = path.grid.len();
        Ok(death.iter().map(|&d| (0..m).map(|s| if s <= d { c } else { 0.0 }).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: String,
    pub scheme: String,
    pub passed: bool,
    /// One line per violation, naming its witness.
    pub violations: Vec<String>,
}

impl AxiomReport {
    fn new(axiom: &str, scheme: &str, violations: Vec<String>) -> Self {
        Self { axiom: axiom.into(), scheme: scheme.into(), passed: violations.is_empty(), violations }
    }
}

/// One realisation: population vector sorted by type, death indices and a
/// lattice path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realisation {
    pub population: Vec<usize>,
    pub death: Vec<usize>,
    pub path: MarketPath,
}

pub fn sample_realisation(
    weights: &PopulationWeights,
    types: &[InvestorType],
    n: u64,
    market: &MarketModel,
    seed: u64,
) -> Result<Realisation> {
    check_types(weights, types)?;
    let counts = weights.counts(n)?;
    let grid = types[0].table.grid();
    let problem = types[0].problem(market, CollectiveSize::Finite(n))?;
    let lattice = problem.lattice()?;
    let mut rng = stream(seed, streams::MARKET, 0);
    let path = MarketPath::from_lattice(&lattice, &lattice.sample_path(&mut rng))?;
    let mut death_rng = stream(seed, streams::MORTALITY, 0);
    let mut population = Vec::with_capacity(n as usize);
    let mut death = Vec::with_capacity(n as usize);
    for (z, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            population.push(z);
            death.push(types[z].table.sample_death(&mut death_rng).min(grid.len() - 1));
        }
    }
    Ok(Realisation { population, death, path })
}

const PAY_TOLERANCE: f64 = 1e-12;

fn same(a: f64, b: f64) -> bool {
    libm::fabs(a - b) <= PAY_TOLERANCE * libm::fabs(a).max(libm::fabs(b)).max(1.0)
}

/// Every permutation of `0..n` by Heap's algorithm (small `n` only).
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Permutations tried exhaustively up to this population size.
pub const EXHAUSTIVE_PERMUTATIONS: usize = 6;

/// Axiom I1: surviving members of one type consume the same, and permuting
/// the population permutes the consumption streams. Permutations are
/// exhaustive for small populations and sampled otherwise.
pub fn check_axiom_fairness<S: ManagementScheme + ?Sized>(
    scheme: &S,
    weights: &PopulationWeights,
    types: &[InvestorType],
    realisation: &Realisation,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let Realisation { population, death, path } = realisation;
    let base = scheme.consumption(weights, types, population, death, path)?;
    let n = population.len();
    let m = path.grid.len();
    let mut violations = Vec::new();
    'pairs: for i in 0..n {
        for j in i + 1..n {
            if population[i] != population[j] {
                continue;
            }
            for t in 0..=death[i].min(death[j]).min(m - 1) {
                if !same(base[i][t], base[j][t]) {
                    violations.push(format!(
                        "unequal pay: individuals {i} and {j} of type {} at t index {t} receive {} and {}",
                        types[population[i]].id, base[i][t], base[j][t]
                    ));
                    if violations.len() >= 8 {
                        break 'pairs;
                    }
                    break;
                }
            }
        }
    }
    let perms = if n <= EXHAUSTIVE_PERMUTATIONS {
        all_permutations(n)
    } else {
        let mut rng = stream(seed, streams::PERMUTATION, 0);
        (0..samples)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect()
    };
    for (k, sigma) in perms.iter().enumerate() {
        // individual sigma[i] of the permuted population is individual i
        let mut pop = vec![0; n];
        let mut dth = vec![0; n];
        for i in 0..n {
            pop[sigma[i]] = population[i];
            dth[sigma[i]] = death[i];
        }
        let permuted = scheme.consumption(weights, types, &pop, &dth, path)?;
        let broken = (0..n).find(|&i| (0..m).any(|t| !same(permuted[sigma[i]][t], base[i][t])));
        if let Some(i) = broken {
            violations.push(format!("permutation {k}: individual {i} moved to {} changes its stream", sigma[i]));
            break;
        }
    }
    Ok(AxiomReport::new("I1", scheme.name(), violations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub n: u64,
    pub gains: Vec<f64>,
}

/// Axiom I2: per-type gains nondecreasing across `sizes`.
pub fn check_axiom_monotone<S: ManagementScheme + ?Sized>(
    scheme: &S,
    weights: &PopulationWeights,
    types: &[InvestorType],
    sizes: &[u64],
    tolerance: f64,
) -> Result<(AxiomReport, Vec<GainRow>)> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let rows: Vec<GainRow> =
        sizes.iter().map(|&n| Ok(GainRow { n, gains: scheme.gains(weights, types, n)? })).collect::<Result<_>>()?;
    let mut violations = Vec::new();
    for w in rows.windows(2) {
        for (z, t) in types.iter().enumerate() {
            if w[1].gains[z] < w[0].gains[z] - tolerance {
                violations.push(format!(
                    "type {} loses from n = {} ({}) to n = {} ({})",
                    t.id, w[0].n, w[0].gains[z], w[1].n, w[1].gains[z]
                ));
            }
        }
    }
    Ok((AxiomReport::new("I2", scheme.name(), violations), rows))
}

/// Axiom I3: each type does at least as well as in its own homogeneous fund
/// of size `n omega`.
pub fn check_axiom_performance<S: ManagementScheme + ?Sized>(
    scheme: &S,
    weights: &PopulationWeights,
    types: &[InvestorType],
    n: u64,
    market: &MarketModel,
    options: &DpOptions,
    tolerance: f64,
) -> Result<AxiomReport> {
    let gains = scheme.gains(weights, types, n)?;
    let counts = weights.counts(n)?;
    let mut violations = Vec::new();
    for ((t, c), g) in types.iter().zip(counts).zip(gains) {
        let v = solve_finite_dp(&t.problem(market, CollectiveSize::Finite(c))?, options)?.value;
        if g < v - tolerance {
            violations.push(format!("type {} gets {g}, below its homogeneous value {v} at size {c}", t.id));
        }
    }
    Ok(AxiomReport::new("I3", scheme.name(), violations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditOptions {
    /// Margin above `v(inf)` that counts as a gain.
    pub eps_above: f64,
    /// Margin below `v(inf)` that counts as a loss.
    pub eps_below: f64,
    /// Absolute slack on the budget identity.
    pub budget_tolerance: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { eps_above: 1e-3, eps_below: 1e-3, budget_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Above,
    Matches,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub id: String,
    pub weight: f64,
    /// `omega q_price(pi gamma)`.
    pub cost: f64,
    /// `omega B`.
    pub budget: f64,
    pub gain: f64,
    pub infinite_value: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoAudit {
    pub rows: Vec<AuditRow>,
    pub total_cost: f64,
    pub total_budget: f64,
    pub budget_identity: bool,
    /// Some type gains beyond `v(inf)` while none loses: impossible for
    /// cashflows that respect the budget identity.
    pub free_lunch: bool,
    /// `(winner, loser)` type ids whenever one type gains and another loses.
    pub peter_paul: Vec<(String, String)>,
    pub options: AuditOptions,
}

/// Prices each type's cashflow, compares its gain with the type's
/// infinite-collective value and flags budget-identity breaches.
pub fn pareto_audit(
    cashflows: &[NodeField],
    weights: &PopulationWeights,
    types: &[InvestorType],
    market: &MarketModel,
    dp: &DpOptions,
    options: &AuditOptions,
) -> Result<ParetoAudit> {
    check_types(weights, types)?;
    if cashflows.len() != types.len() {
        return Err(Error::Shape(format!("{} cashflows for {} types", cashflows.len(), types.len())));
    }
    let mut rows = Vec::with_capacity(types.len());
    for (z, (t, gamma)) in types.iter().zip(cashflows).enumerate() {
        let problem = t.problem(market, CollectiveSize::Infinite)?;
        let lattice = problem.lattice()?;
        let per_member = gamma.map(|i, _, g| t.table.survival(i) * g);
        let w = weights.weight(z);
        let cost = w * lattice.q_price(&per_member)?;
        let chain = LatticeChain::new(&lattice, &t.table, gamma)?;
        let gain = evaluate(&Recursion::new(&t.gain, t.table.grid().step()), &chain);
        let infinite_value = solve_infinite_dp(&problem, dp)?.value;
        let verdict = if gain > infinite_value + options.eps_above {
            Verdict::Above
        } else if gain < infinite_value - options.eps_below {
            Verdict::Below
        } else {
            Verdict::Matches
        };
        rows.push(AuditRow { id: t.id.clone(), weight: w, cost, budget: w * t.budget, gain, infinite_value, verdict });
    }
    let total_cost: f64 = rows.iter().map(|r| r.cost).sum();
    let total_budget: f64 = rows.iter().map(|r| r.budget).sum();
    let any = |v: Verdict| rows.iter().any(|r| r.verdict == v);
    let free_lunch = any(Verdict::Above) && !any(Verdict::Below);
    let mut peter_paul = Vec::new();
    for a in rows.iter().filter(|r| r.verdict == Verdict::Above) {
        for b in rows.iter().filter(|r| r.verdict == Verdict::Below) {
            peter_paul.push((a.id.clone(), b.id.clone()));
        }
    }
    Ok(ParetoAudit {
        budget_identity: total_cost <= total_budget + options.budget_tolerance,
        rows,
        total_cost,
        total_budget,
        free_lunch,
        peter_paul,
        options: *options,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub budgets: Vec<f64>,
    pub values: Vec<f64>,
    /// `(b1, b2, v((b1 + b2) / 2) - (v(b1) + v(b2)) / 2)` for each pair.
    pub midpoint_gaps: Vec<(f64, f64, f64)>,
    pub concave: bool,
    /// Largest relative deviation from `v(b) = b^alpha v(1)` (power) or
    /// `v(b) = v(1) + (sum_t e^{-bt} pi_t dt) ln b` (log), when applicable.
    pub scaling_error: Option<f64>,
}

/// Infinite-collective value as a function of the budget, with midpoint
/// concavity over every pair of budgets.
pub fn value_vs_budget_curve(
    investor: &InvestorType,
    market: &MarketModel,
    budgets: &[f64],
    options: &DpOptions,
    tolerance: f64,
) -> Result<BudgetCurve> {
    if budgets.is_empty() || budgets.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Domain { what: "budgets must be positive", value: budgets.iter().cloned().fold(f64::NAN, f64::min) });
    }
    let value = |b: f64| -> Result<f64> {
        let t = InvestorType { budget: b, ..investor.clone() };
        Ok(solve_infinite_dp(&t.problem(market, CollectiveSize::Infinite)?, options)?.value)
    };
    let values: Vec<f64> = budgets.iter().map(|&b| value(b)).collect::<Result<_>>()?;
    let mut midpoint_gaps = Vec::new();
    for i in 0..budgets.len() {
        for j in i..budgets.len() {
            let mid = value(0.5 * (budgets[i] + budgets[j]))?;
            midpoint_gaps.push((budgets[i], budgets[j], mid - 0.5 * (values[i] + values[j])));
        }
    }
    let concave = midpoint_gaps.iter().all(|g| g.2 >= -tolerance);
    let scaling_error = match &investor.gain {
        GainFunction::Vnm(p) => {
            let unit = value(1.0)?;
            let grid = investor.table.grid();
            let predict = |b: f64| match p.utility {
                Utility::Power { exponent } => Some(libm::pow(b, exponent) * unit),
                Utility::Log => {
                    let weight: f64 = (0..grid.len())
                        .map(|i| libm::exp(-p.discount * grid.time(i)) * investor.table.survival(i) * grid.step())
                        .sum();
                    Some(unit + weight * libm::log(b))
                }
                _ => None,
            };
            budgets
                .iter()
                .zip(&values)
                .map(|(&b, &v)| predict(b).map(|e| libm::fabs(v - e) / libm::fabs(e).max(1e-300)))
                .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
        }
        _ => None,
    };
    Ok(BudgetCurve { budgets: budgets.to_vec(), values, midpoint_gaps, concave, scaling_error })
}

impl core::fmt::Display for Verdict {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            Verdict::Above => "above",
            Verdict::Matches => "matches",
            Verdict::Below => "below",
        };
        f.write_str(s)
    }
}
