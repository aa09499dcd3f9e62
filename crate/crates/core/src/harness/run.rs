use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{BudgetMode, HarnessConfig, HarnessError, PlannerKind};
use crate::env::{run_episode, sample_block, Dynamics, EpisodeResult, Policy, RandomPolicy};
use crate::particle::{ObsModel, ParticleBelief};
use crate::planner::{plan, Budget, NptBackend, NptBelief, NptPolicy, PftBackend, PftPolicy, PlanResult, PlannerConfig};
use crate::pnp::{mean_and_se, History, PnpModel};
use crate::{Block, Scenario, SimRng};

/// One row of the benchmark CSV. Wall time goes to a separate timing file so
/// that this one is reproducible byte for byte in iteration mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub planner: String,
    pub budget_seconds: f64,
    /// Iterations per decision; 0 when the budget is wall-clock.
    pub budget_iterations: u64,
    pub trial: usize,
    pub seed: u64,
    pub progress_percent: f64,
    pub terminal: String,
    pub steps: usize,
    pub simulate_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: String,
    pub planner: String,
    pub budget_seconds: f64,
    pub trial: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub planner: String,
    pub budget_seconds: f64,
    pub trials: usize,
    pub mean_progress: f64,
    pub se_progress: f64,
}

impl CellSummary {
    pub(crate) fn from_rows(rows: &[&ResultRow]) -> Self {
        let progress: Vec<f64> = rows.iter().map(|r| r.progress_percent).collect();
        let (mean_progress, se_progress) = mean_and_se(&progress);
        let r = rows[0];
        CellSummary {
            scenario: r.scenario.clone(),
            planner: r.planner.clone(),
            budget_seconds: r.budget_seconds,
            trials: rows.len(),
            mean_progress,
            se_progress,
        }
    }
}

/// Measured planning speed from the scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub scenario: String,
    pub planner: String,
    pub iterations_per_second: f64,
    pub seconds_per_call: f64,
}

/// Everything one trial needs.
#[derive(Debug, Clone)]
pub struct TrialSpec<'a> {
    pub scenario: &'a Scenario,
    pub planner: PlannerKind,
    pub budget_seconds: f64,
    pub budget: Budget,
    pub trial: usize,
    pub seed: u64,
}

/// Read-only state shared by all trials of a command.
pub(crate) struct Shared<'a> {
    pub dynamics: Dynamics,
    pub template: Block,
    pub search: PlannerConfig,
    pub obs: ObsModel,
    pub model: Option<&'a PnpModel>,
    pub max_steps: usize,
}

impl<'a> Shared<'a> {
    pub fn new(config: &HarnessConfig, model: Option<&'a PnpModel>) -> Result<Self, HarnessError> {
        Ok(Shared {
            dynamics: config.simulator.dynamics,
            template: config.simulator.block.block()?,
            search: config.planner.search,
            obs: config.planner.observation,
            model,
            max_steps: config.experiment.max_steps,
        })
    }

    fn model(&self) -> Result<&'a PnpModel, HarnessError> {
        self.model.ok_or_else(|| HarnessError::Runtime("the npt planner needs a trained checkpoint".into()))
    }

    pub fn policy<'s>(
        &'s self,
        kind: PlannerKind,
        scenario: &'s Scenario,
        budget: Budget,
        rng: &mut SimRng,
    ) -> Result<Box<dyn Policy + 's>, HarnessError> {
        let config = self.search.with_budget(budget);
        Ok(match kind {
            PlannerKind::Npt => Box::new(NptPolicy::new(self.model()?, History::default(), config, scenario, &self.dynamics)),
            PlannerKind::Pft(n) => {
                let belief = ParticleBelief::init_prior(n, &self.template, scenario.start, rng)
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
                Box::new(PftPolicy::new(belief, self.obs, config, scenario, &self.dynamics))
            }
            PlannerKind::Random => Box::new(RandomPolicy { dynamics: self.dynamics }),
        })
    }

    /// A single search from the scenario start with an empty history or a fresh prior.
    pub fn plan_from_start(
        &self,
        kind: PlannerKind,
        scenario: &Scenario,
        budget: Budget,
        rng: &mut SimRng,
    ) -> Result<PlanResult, HarnessError> {
        let config = self.search.with_budget(budget);
        match kind {
            PlannerKind::Npt => {
                let mut backend = NptBackend::new(self.model()?);
                let root = NptBelief::new(History::default());
                Ok(plan(&mut backend, root, scenario.start, scenario, &self.dynamics, &config, rng))
            }
            PlannerKind::Pft(n) => {
                let root = ParticleBelief::init_prior(n, &self.template, scenario.start, rng)
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?;
                let mut backend = PftBackend::new(&self.dynamics, self.obs);
                Ok(plan(&mut backend, root, scenario.start, scenario, &self.dynamics, &config, rng))
            }
            PlannerKind::Random => Err(HarnessError::Runtime("the random baseline does not search".into())),
        }
    }
}

pub(crate) fn budget_for(
    kind: PlannerKind,
    seconds: f64,
    mode: BudgetMode,
    rates: &BTreeMap<String, f64>,
) -> Result<Budget, HarnessError> {
    if mode == BudgetMode::Seconds || kind == PlannerKind::Random {
        return Ok(Budget::Seconds(seconds));
    }
    let rate = rates
        .get(&kind.to_string())
        .ok_or_else(|| HarnessError::Config(format!("no iteration rate for planner `{kind}`")))?;
    Ok(Budget::Iterations((rate * seconds).round().max(1.0) as u64))
}

/// Runs one episode with a fresh center of mass drawn from the trial seed.
pub fn run_trial(shared_config: &HarnessConfig, model: Option<&PnpModel>, spec: &TrialSpec) -> Result<(EpisodeResult, f64), HarnessError> {
    let shared = Shared::new(shared_config, model)?;
    run_trial_with(&shared, spec)
}

pub(crate) fn run_trial_with(shared: &Shared, spec: &TrialSpec) -> Result<(EpisodeResult, f64), HarnessError> {
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let block = sample_block(&shared.template, &mut rng);
    let start = Instant::now();
    let mut policy = shared.policy(spec.planner, spec.scenario, spec.budget, &mut rng)?;
    let result = run_episode(policy.as_mut(), spec.scenario, &block, &shared.dynamics, shared.max_steps, &mut rng)?;
    Ok((result, start.elapsed().as_secs_f64()))
}

pub(crate) fn result_row(spec: &TrialSpec, result: &EpisodeResult) -> ResultRow {
    ResultRow {
        scenario: spec.scenario.name.clone(),
        planner: spec.planner.to_string(),
        budget_seconds: spec.budget_seconds,
        budget_iterations: match spec.budget {
            Budget::Iterations(n) if spec.planner != PlannerKind::Random => n,
            _ => 0,
        },
        trial: spec.trial,
        seed: spec.seed,
        progress_percent: result.progress_percent,
        terminal: result.terminal.to_string(),
        steps: result.steps.len(),
        simulate_calls: result.simulate_calls,
    }
}

/// Measures iterations per second and seconds per simulate call for each
/// searching planner with `probe_seconds` wall-clock searches from the
/// scenario start. Repeats cycle through the planners so slow phases of the
/// machine hit all of them; the median over `repeats` probes is kept.
pub fn calibrate(
    config: &HarnessConfig,
    model: Option<&PnpModel>,
    scenario: &Scenario,
    planners: &[PlannerKind],
) -> Result<Vec<CalibrationRow>, HarnessError> {
    let shared = Shared::new(config, model)?;
    let cal = config.experiment.calibration;
    let kinds: Vec<PlannerKind> = planners.iter().copied().filter(|p| *p != PlannerKind::Random).collect();
    let mut rates = vec![Vec::with_capacity(cal.repeats); kinds.len()];
    let mut per_call = vec![Vec::with_capacity(cal.repeats); kinds.len()];
    for r in 0..cal.repeats {
        for (i, &kind) in kinds.iter().enumerate() {
            let mut rng = SimRng::seed_from_u64(config.experiment.seed ^ r as u64);
            let t0 = Instant::now();
            let res = shared.plan_from_start(kind, scenario, Budget::Seconds(cal.probe_seconds), &mut rng)?;
            let dt = t0.elapsed().as_secs_f64().max(1e-9);
            rates[i].push(res.iterations as f64 / dt);
            per_call[i].push(dt / res.simulate_calls.max(1) as f64);
        }
    }
    let mut rows = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let row = CalibrationRow {
            scenario: scenario.name.clone(),
            planner: kind.to_string(),
            iterations_per_second: median(&mut rates[i]),
            seconds_per_call: median(&mut per_call[i]),
        };
        log::info!("calibration {}: {:.0} it/s, {:.2e} s/call", row.planner, row.iterations_per_second, row.seconds_per_call);
        rows.push(row);
    }
    Ok(rows)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
