//! Experiment configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use collective_core::heterogeneous::{InvestorType, PopulationWeights};
use collective_core::market::{MarketModel, RiskyAsset};
use collective_core::mortality::{MortalityLaw, MortalityTable};
use collective_core::optimizer::{CollectiveSize, DpOptions, HomogeneousProblem};
use collective_core::preferences::GainFunction;
use collective_core::TimeGrid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub step: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub drift: f64,
    pub volatility: f64,
    #[serde(default = "one")]
    pub initial: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub rate: f64,
    #[serde(default)]
    pub assets: Vec<AssetConfig>,
    /// Row-major correlation; identity when omitted.
    #[serde(default)]
    pub correlation: Option<Vec<f64>>,
}

impl MarketConfig {
    pub fn build(&self) -> Result<MarketModel> {
        let k = self.assets.len();
        let corr = match &self.correlation {
            Some(c) => c.clone(),
            None => (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect(),
        };
        let assets = self.assets.iter().map(|a| RiskyAsset { drift: a.drift, volatility: a.volatility, initial: a.initial }).collect();
        Ok(MarketModel::new(self.rate, assets, corr)?)
    }
}

/// A homogeneous fund: named preference and mortality entries plus a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundConfig {
    pub preferences: String,
    pub mortality: String,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub id: String,
    pub preferences: String,
    pub mortality: String,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub types: Vec<TypeConfig>,
    /// Exact fractions such as `"1/3"`, one per type.
    pub weights: PopulationWeights,
}

/// Knobs shared by the commands and verification suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Collective sizes for value tables.
    pub sizes: Vec<u64>,
    /// Sizes for the infinite-to-finite transfer.
    pub transfer_sizes: Vec<u64>,
    pub lambda: f64,
    /// Size at which the collectivisation-benefit ratio is reported.
    pub benefit_size: u64,
    /// Smallest acceptable benefit ratio at `benefit_size`.
    pub benefit_floor: f64,
    /// Monte Carlo paths for audits and simulation.
    pub paths: u64,
    /// Monte Carlo trials for probability estimates.
    pub trials: u64,
    /// Tolerance for monotonicity checks.
    pub tolerance: f64,
    /// Truncation levels for the BSDE study (`null` means untruncated).
    pub levels: Vec<Option<f64>>,
    /// Time offset in the error bound; `T / 10` when omitted.
    pub delta: Option<f64>,
    /// Collective sizes for the heterogeneous axiom checks.
    pub population_sizes: Vec<u64>,
    /// Random permutations per fairness check above exhaustive sizes.
    pub permutations: u64,
    /// Budgets for the value-versus-budget curves.
    pub budgets: Vec<f64>,
    pub dp: DpOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20240611,
            sizes: vec![1, 2, 4, 8, 16, 32],
            transfer_sizes: vec![10, 100, 1000],
            lambda: 0.9,
            benefit_size: 100,
            benefit_floor: 0.88,
            paths: 100_000,
            trials: 100_000,
            tolerance: 1e-8,
            levels: vec![Some(0.1), Some(1.0), Some(10.0), Some(100.0), None],
            delta: None,
            population_sizes: vec![2, 4, 8],
            permutations: 200,
            budgets: vec![1.0, 2.0, 4.0],
            dp: DpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub market: MarketConfig,
    pub mortality: BTreeMap<String, MortalityLaw>,
    pub preferences: BTreeMap<String, GainFunction>,
    /// Homogeneous funds, run in order.
    pub funds: Vec<FundConfig>,
    #[serde(default)]
    pub population: Option<PopulationConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

/// A parsed config with the SHA-256 of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub source: String,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses config text. Errors carry the source name, line, column and the
/// path of the offending field.
pub fn parse(text: &str, source: &str) -> Result<LoadedConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let field = e.path().to_string();
        anyhow!("{source}:{}:{}: at `{field}`: {inner}", inner.line(), inner.column())
    })?;
    config.validate().with_context(|| format!("{source}: invalid config"))?;
    Ok(LoadedConfig { config, hash: hash_bytes(text.as_bytes()), source: source.to_string() })
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text, &path.display().to_string())
}

impl ExperimentConfig {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid.step, self.grid.horizon)?)
    }

    pub fn table(&self, name: &str) -> Result<MortalityTable> {
        let law = self.mortality.get(name).ok_or_else(|| anyhow!("unknown mortality entry `{name}`"))?;
        MortalityTable::new(law, self.time_grid()?).with_context(|| format!("mortality entry `{name}`"))
    }

    pub fn gain(&self, name: &str) -> Result<GainFunction> {
        let g = self.preferences.get(name).ok_or_else(|| anyhow!("unknown preference entry `{name}`"))?;
        g.validate().with_context(|| format!("preference entry `{name}`"))?;
        Ok(g.clone())
    }

    pub fn problem(&self, fund: &FundConfig, size: CollectiveSize) -> Result<HomogeneousProblem> {
        let p = HomogeneousProblem::new(self.gain(&fund.preferences)?, self.table(&fund.mortality)?, self.market.build()?, fund.budget, size)
            .with_context(|| format!("fund `{}`/`{}`", fund.preferences, fund.mortality))?;
        Ok(p)
    }

    pub fn types(&self) -> Result<(Vec<InvestorType>, PopulationWeights)> {
        let pop = self.population.as_ref().ok_or_else(|| anyhow!("config has no population section"))?;
        let types = pop
            .types
            .iter()
            .map(|t| Ok(InvestorType::new(t.id.clone(), t.budget, self.table(&t.mortality)?, self.gain(&t.preferences)?)?))
            .collect::<Result<Vec<_>>>()?;
        Ok((types, pop.weights.clone()))
    }

    pub fn delta(&self) -> f64 {
        self.run.delta.unwrap_or(self.grid.horizon / 10.0)
    }

    fn validate(&self) -> Result<()> {
        self.time_grid()?;
        self.market.build().context("market")?;
        for name in self.mortality.keys() {
            self.table(name)?;
        }
        for name in self.preferences.keys() {
            self.gain(name)?;
        }
        for (i, f) in self.funds.iter().enumerate() {
            self.problem(f, CollectiveSize::Infinite).with_context(|| format!("funds[{i}]"))?;
        }
        if let Some(pop) = &self.population {
            if pop.types.len() != pop.weights.len() {
                bail!("population has {} types and {} weights", pop.types.len(), pop.weights.len());
            }
            self.types().context("population")?;
        }
        let r = &self.run;
        if r.sizes.is_empty() || r.sizes.contains(&0) {
            bail!("run.sizes must be nonempty and positive");
        }
        if !(r.lambda > 0.0 && r.lambda < 1.0) {
            bail!("run.lambda must lie in (0, 1), got {}", r.lambda);
        }
        if !(r.tolerance >= 0.0) {
            bail!("run.tolerance must be nonnegative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "grid": { "step": 1.0, "horizon": 5.0 },
  "market": { "rate": 0.01, "assets": [ { "drift": 0.05, "volatility": 0.2 } ] },
  "mortality": { "flat": { "family": "uniform" } },
  "preferences": { "log": { "family": "vnm", "utility": { "family": "log" }, "discount": 0.0 } },
  "funds": [ { "preferences": "log", "mortality": "flat", "budget": 5.0 } ]
}"#;

    #[test]
    fn minimal_config_parses() {
        let c = parse(MINIMAL, "min.json").unwrap();
        assert_eq!(c.hash.len(), 64);
        assert_eq!(c.config.run, RunConfig::default());
        assert!(c.config.problem(&c.config.funds[0], CollectiveSize::Finite(3)).is_ok());
    }

    #[test]
    fn missing_field_is_named() {
        let broken = MINIMAL.replace(r#""budget": 5.0"#, r#""budgt": 5.0"#);
        let e = parse(&broken, "x.json").unwrap_err().to_string();
        assert!(e.contains("budgt"), "{e}");
        let missing = MINIMAL.replace(r#", "budget": 5.0"#, "");
        let e = parse(&missing, "x.json").unwrap_err().to_string();
        assert!(e.starts_with("x.json:6:"), "{e}");
        assert!(e.contains("missing field `budget`"), "{e}");
    }

    #[test]
    fn unknown_references_are_rejected() {
        let broken = MINIMAL.replace(r#""mortality": "flat""#, r#""mortality": "steep""#);
        let e = format!("{:#}", parse(&broken, "x.json").unwrap_err());
        assert!(e.contains("unknown mortality entry `steep`"), "{e}");
    }
}
