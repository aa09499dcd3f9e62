use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, PlannerKind};
use crate::env::{builtin_scenario, load_scenario, Dynamics};
use crate::particle::ObsModel;
use crate::planner::PlannerConfig;
use crate::pnp::{PnpConfig, TrainConfig};
use crate::{Block, Scenario};

/// Everything a harness command needs, read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub simulator: SimulatorSection,
    /// Built-in scenario names or paths to scenario JSON files.
    pub scenarios: Vec<String>,
    pub pnp: PnpSection,
    pub planner: PlannerSection,
    pub experiment: ExperimentConfig,
    /// Directory relative paths are resolved against; set by [`HarnessConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            simulator: SimulatorSection::default(),
            scenarios: vec!["open".into(), "corridor".into(), "ring".into()],
            pnp: PnpSection::default(),
            planner: PlannerSection::default(),
            experiment: ExperimentConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub dynamics: Dynamics,
    pub block: BlockTemplate,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self { dynamics: Dynamics::default(), block: BlockTemplate::default() }
    }
}

/// Block geometry shared by every trial; the center of mass is drawn per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockTemplate {
    pub half_extents: [f64; 2],
    pub height: f64,
    pub mass: f64,
}

impl Default for BlockTemplate {
    fn default() -> Self {
        let b = Block::default();
        Self { half_extents: b.half_extents, height: b.height, mass: b.mass }
    }
}

impl BlockTemplate {
    pub fn block(&self) -> Result<Block, HarnessError> {
        Block::new(self.half_extents, self.height, self.mass, [0.0, 0.0])
            .map_err(|e| HarnessError::Config(format!("simulator.block: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpSection {
    pub model: PnpConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    /// Seed for the initial weights.
    pub init_seed: u64,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for PnpSection {
    fn default() -> Self {
        Self {
            model: PnpConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            init_seed: 0,
            dataset: PathBuf::from("data/pushes.jsonl"),
            checkpoint: PathBuf::from("model/pnp.json"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub blocks: usize,
    pub pushes: usize,
    pub seed: u64,
    /// Trailing blocks kept out of training to report held-out log-likelihood.
    pub holdout_blocks: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { blocks: 500, pushes: 20, seed: 1, holdout_blocks: 50 }
    }
}

/// Fresh blocks for the context curve, generated unless `dataset` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub blocks: usize,
    pub pushes: usize,
    pub seed: u64,
    pub max_context: usize,
    pub dataset: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { blocks: 250, pushes: 20, seed: 7, max_context: 10, dataset: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// Search parameters; the budget field is replaced per cell.
    pub search: PlannerConfig,
    /// Likelihood used by particle beliefs.
    pub observation: ObsModel,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self { search: PlannerConfig::default(), observation: ObsModel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Wall-clock budgets.
    #[default]
    Seconds,
    /// Seconds converted to iterations with rates measured at the start of the command.
    Calibrated,
    /// Seconds converted to iterations with the fixed `iterations_per_second` table.
    Iterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Wall-clock length of one probe search.
    pub probe_seconds: f64,
    pub repeats: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { probe_seconds: 1.0, repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub planners: Vec<PlannerKind>,
    pub budgets: Vec<f64>,
    pub budget_mode: BudgetMode,
    /// Planner name to iterations per second, used by the `iterations` mode.
    pub iterations_per_second: BTreeMap<String, f64>,
    pub calibration: CalibrationConfig,
    pub trials: usize,
    pub count_plans: usize,
    pub count_budgets: Vec<f64>,
    pub max_steps: usize,
    pub seed: u64,
    /// Budget in seconds for `plan-episode`.
    pub episode_budget: f64,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            planners: vec![PlannerKind::Npt, PlannerKind::Pft(10), PlannerKind::Pft(30), PlannerKind::Pft(100)],
            budgets: vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0],
            budget_mode: BudgetMode::Seconds,
            iterations_per_second: BTreeMap::new(),
            calibration: CalibrationConfig::default(),
            trials: 15,
            count_plans: 10,
            count_budgets: vec![1.0, 5.0, 10.0],
            max_steps: 30,
            seed: 0,
            episode_budget: 1.0,
            workers: None,
        }
    }
}

impl HarnessConfig {
    /// Reads and validates a config file. Errors name the offending field.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            HarnessError::Config(format!("at `{at}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        self.simulator.dynamics.validate().map_err(|e| HarnessError::Config(format!("simulator.dynamics: {e}")))?;
        self.simulator.block.block()?;
        self.planner.search.validate().map_err(|e| HarnessError::Config(format!("planner.search: {e}")))?;
        ObsModel::new(self.planner.observation.sigma_pos, self.planner.observation.sigma_yaw)
            .map_err(|e| HarnessError::Config(format!("planner.observation: {e}")))?;
        self.pnp.train.validate().map_err(|e| HarnessError::Config(format!("pnp.train: {e}")))?;
        let x = &self.experiment;
        if self.scenarios.is_empty() {
            return err("scenarios: at least one scenario is required".into());
        }
        if x.trials == 0 || x.count_plans == 0 {
            return err("experiment: trials and count_plans must be at least 1".into());
        }
        if x.planners.is_empty() {
            return err("experiment.planners: at least one planner is required".into());
        }
        for (name, list) in [("budgets", &x.budgets), ("count_budgets", &x.count_budgets)] {
            if let Some(b) = list.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
                return err(format!("experiment.{name}: budgets must be positive seconds, got {b}"));
            }
        }
        if !(x.episode_budget > 0.0 && x.episode_budget.is_finite()) {
            return err(format!("experiment.episode_budget must be positive, got {}", x.episode_budget));
        }
        if x.workers == Some(0) {
            return err("experiment.workers must be at least 1".into());
        }
        if !(x.calibration.probe_seconds > 0.0) || !x.calibration.probe_seconds.is_finite() || x.calibration.repeats == 0 {
            return err("experiment.calibration: probe_seconds must be positive and repeats at least 1".into());
        }
        if x.budget_mode == BudgetMode::Iterations {
            for p in x.planners.iter().filter(|p| **p != PlannerKind::Random) {
                match x.iterations_per_second.get(&p.to_string()) {
                    Some(r) if *r > 0.0 && r.is_finite() => {}
                    Some(r) => return err(format!("experiment.iterations_per_second.{p}: must be positive, got {r}")),
                    None => return err(format!("experiment.iterations_per_second: missing rate for planner `{p}`")),
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>, HarnessError> {
        self.scenarios
            .iter()
            .map(|s| match builtin_scenario(s) {
                Ok(sc) => Ok(sc),
                Err(_) if s.ends_with(".json") => load_scenario(&self.resolve(Path::new(s))).map_err(HarnessError::from),
                Err(_) => Err(HarnessError::Config(format!("scenarios: unknown scenario `{s}`"))),
            })
            .collect()
    }

    pub fn scenario(&self, name: &str) -> Result<Scenario, HarnessError> {
        self.scenario_list()?
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HarnessError::Config(format!("scenario `{name}` is not listed in `scenarios`")))
    }

    /// Worker count: `PUSHPOMDP_WORKERS`, then the config, then the number of cores.
    pub fn workers(&self) -> Result<usize, HarnessError> {
        if let Ok(v) = std::env::var("PUSHPOMDP_WORKERS") {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(HarnessError::Config(format!("PUSHPOMDP_WORKERS must be a positive integer, got `{v}`"))),
            };
        }
        Ok(self.experiment.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = HarnessConfig::from_json("{}").unwrap();
        assert_eq!(c.experiment.trials, 15);
        assert_eq!(c.experiment.budgets, vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0]);
        assert_eq!(c.planner.search.depth, 3);
        assert_eq!(c.scenario_list().unwrap().len(), 3);
    }

    #[test]
    fn errors_name_the_field() {
        let e = HarnessConfig::from_json(r#"{"planner": {"search": {"depth": "three"}}}"#).unwrap_err();
        let m = e.to_string();
        assert!(m.contains("planner.search.depth"), "{m}");
        let e = HarnessConfig::from_json(r#"{"experiment": {"trails": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("trails"), "{e}");
        assert!(e.is_config());
    }

    #[test]
    fn semantic_checks() {
        assert!(HarnessConfig::from_json(r#"{"experiment": {"trials": 0}}"#).is_err());
        assert!(HarnessConfig::from_json(r#"{"experiment": {"budget_mode": "iterations"}}"#).is_err());
        let ok = r#"{"experiment": {"budget_mode": "iterations", "planners": ["npt", "random"],
                     "iterations_per_second": {"npt": 1000}}}"#;
        assert!(HarnessConfig::from_json(ok).is_ok());
        assert!(HarnessConfig::from_json(r#"{"scenarios": ["moon"]}"#).unwrap().scenario_list().is_err());
    }
}
