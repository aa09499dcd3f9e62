use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{budget_for, result_row, run_trial_with, Shared};
use super::{calibrate, BudgetMode, CalibrationRow, CellSummary, HarnessConfig, HarnessError, PlannerKind, ResultRow, TimingRow, TrialSpec};
use crate::env::{reward, run_episode, sample_block, Decision, Policy, Terminal};
use crate::planner::Budget;
use crate::pnp::{
    eval_context_curve, gen_dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset, train, ContextPoint,
    EpochStats, PnpModel, PushDataset,
};
use crate::{Action, Pose, SimRng};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let csv_err = |source| HarnessError::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// `dir/name.ext` becomes `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn output_path(config: &HarnessConfig, out: Option<&Path>, default: &Path) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| config.resolve(default))
}

fn load_model(config: &HarnessConfig) -> Result<PnpModel, HarnessError> {
    let path = config.resolve(&config.pnp.checkpoint);
    if !path.exists() {
        return Err(HarnessError::Config(format!("pnp.checkpoint: {} does not exist (run `train` first)", path.display())));
    }
    Ok(load_checkpoint(&path)?)
}

fn pool(config: &HarnessConfig) -> Result<rayon::ThreadPool, HarnessError> {
    let workers = config.workers()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start {workers} workers: {e}")))
}

/// Generates the push dataset and returns its path and record count.
pub fn cmd_gen_data(config: &HarnessConfig, seed: Option<u64>, out: Option<&Path>) -> Result<(PathBuf, usize), HarnessError> {
    let d = &config.pnp.data;
    let path = output_path(config, out, &config.pnp.dataset);
    let mut rng = SimRng::seed_from_u64(seed.unwrap_or(d.seed));
    let template = config.simulator.block.block()?;
    let data = gen_dataset(d.blocks, d.pushes, &template, &config.simulator.dynamics, &mut rng)?;
    ensure_parent(&path)?;
    save_dataset(&path, &data)?;
    let n = data.record_count();
    println!("wrote {n} records ({} blocks) to {}", data.blocks.len(), path.display());
    Ok((path, n))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub epochs: Vec<EpochStats>,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    elbo_loss: f64,
    holdout_loglik: Option<f64>,
}

/// Trains on the configured dataset and writes the checkpoint plus a
/// `<checkpoint>.loss.csv` with one row per epoch.
pub fn cmd_train(config: &HarnessConfig, seed: Option<u64>, out: Option<&Path>) -> Result<TrainOutput, HarnessError> {
    let data_path = config.resolve(&config.pnp.dataset);
    if !data_path.exists() {
        return Err(HarnessError::Config(format!("pnp.dataset: {} does not exist (run `gen-data` first)", data_path.display())));
    }
    let dataset = load_dataset(&data_path)?;
    let k = config.pnp.data.holdout_blocks;
    if k >= dataset.blocks.len() {
        return Err(HarnessError::Config(format!(
            "pnp.data.holdout_blocks ({k}) leaves no training blocks out of {}",
            dataset.blocks.len()
        )));
    }
    let (train_blocks, holdout_blocks) = dataset.blocks.split_at(dataset.blocks.len() - k);
    let train_set = PushDataset { blocks: train_blocks.to_vec() };
    let holdout = PushDataset { blocks: holdout_blocks.to_vec() };
    let mut tc = config.pnp.train.clone();
    if let Some(s) = seed {
        tc.seed = s;
    }
    let template = config.simulator.block.block()?;
    let mut rng = SimRng::seed_from_u64(config.pnp.init_seed);
    let mut model = PnpModel::new(config.pnp.model.clone(), crate::pnp::block_features(&template), &mut rng)?;
    log::info!(
        "training on {} blocks ({} held out), {} parameters",
        train_set.blocks.len(),
        holdout.blocks.len(),
        model.params().scalar_count()
    );
    let report = train(&mut model, &train_set, &holdout, &tc, |s, _| {
        log::info!("epoch {:>4}  elbo loss {:>10.4}  holdout ll {:?}", s.epoch, s.elbo_loss, s.holdout_loglik);
    })?;
    let checkpoint = output_path(config, out, &config.pnp.checkpoint);
    ensure_parent(&checkpoint)?;
    save_checkpoint(&checkpoint, &model)?;
    let loss_csv = sibling(&checkpoint, "loss.csv");
    let rows: Vec<LossRow> = report
        .epochs
        .iter()
        .map(|e| LossRow { epoch: e.epoch, elbo_loss: e.elbo_loss, holdout_loglik: e.holdout_loglik })
        .collect();
    write_csv(&loss_csv, &rows)?;
    if let Some(last) = report.epochs.last() {
        println!("trained {} epochs, final elbo loss {:.4}; checkpoint {}", last.epoch, last.elbo_loss, checkpoint.display());
    }
    Ok(TrainOutput { checkpoint, loss_csv, epochs: report.epochs })
}

/// Context-size error curve of the configured checkpoint on fresh blocks.
pub fn cmd_eval_context(config: &HarnessConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Vec<ContextPoint>, HarnessError> {
    let model = load_model(config)?;
    let e = &config.pnp.eval;
    let dataset: PushDataset = match &e.dataset {
        Some(p) => load_dataset(&config.resolve(p))?,
        None => {
            let mut rng = SimRng::seed_from_u64(seed.unwrap_or(e.seed));
            let template = config.simulator.block.block()?;
            gen_dataset(e.blocks, e.pushes, &template, &config.simulator.dynamics, &mut rng)?
        }
    };
    let curve = eval_context_curve(&model, &dataset, e.max_context)?;
    let path = output_path(config, out, Path::new("results/context.csv"));
    write_csv(&path, &curve)?;
    for p in &curve {
        println!("context {:>2}: error {:.5} ± {:.5} m", p.context, p.mean_error, p.std_error);
    }
    Ok(curve)
}

fn iteration_rates(
    config: &HarnessConfig,
    model: Option<&PnpModel>,
    planners: &[PlannerKind],
) -> Result<(BTreeMap<String, f64>, Vec<CalibrationRow>), HarnessError> {
    match config.experiment.budget_mode {
        BudgetMode::Seconds => Ok((BTreeMap::new(), Vec::new())),
        BudgetMode::Iterations => Ok((config.experiment.iterations_per_second.clone(), Vec::new())),
        BudgetMode::Calibrated => {
            let scenario = config.scenario_list()?.remove(0);
            let rows = calibrate(config, model, &scenario, planners)?;
            let rates = rows.iter().map(|r| (r.planner.clone(), r.iterations_per_second)).collect();
            Ok((rates, rows))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Vec<CellSummary>,
    pub calibration: Vec<CalibrationRow>,
    pub csv: PathBuf,
}

/// Runs every (scenario, planner, budget, trial) episode. Trial `i` uses seed
/// `seed ^ i` for every cell, so planners face the same blocks. Results are
/// identical for any worker count in iteration modes.
pub fn cmd_bench(config: &HarnessConfig, seed: Option<u64>, out: Option<&Path>) -> Result<BenchOutput, HarnessError> {
    let x = &config.experiment;
    let base = seed.unwrap_or(x.seed);
    let model = if x.planners.contains(&PlannerKind::Npt) { Some(load_model(config)?) } else { None };
    let scenarios = config.scenario_list()?;
    let (rates, calibration) = iteration_rates(config, model.as_ref(), &x.planners)?;
    let shared = Shared::new(config, model.as_ref())?;

    let mut specs = Vec::new();
    for sc in &scenarios {
        for &planner in &x.planners {
            for &secs in &x.budgets {
                let budget = budget_for(planner, secs, x.budget_mode, &rates)?;
                for trial in 0..x.trials {
                    specs.push(TrialSpec { scenario: sc, planner, budget_seconds: secs, budget, trial, seed: base ^ trial as u64 });
                }
            }
        }
    }
    log::info!("bench: {} episodes on {} workers", specs.len(), config.workers()?);
    let results: Vec<_> = pool(config)?.install(|| specs.par_iter().map(|s| run_trial_with(&shared, s)).collect());

    let mut rows = Vec::with_capacity(specs.len());
    let mut timings = Vec::with_capacity(specs.len());
    for (spec, res) in specs.iter().zip(results) {
        match res {
            Ok((episode, wall)) => {
                rows.push(result_row(spec, &episode));
                timings.push(TimingRow {
                    scenario: spec.scenario.name.clone(),
                    planner: spec.planner.to_string(),
                    budget_seconds: spec.budget_seconds,
                    trial: spec.trial,
                    wall_seconds: wall,
                });
            }
            Err(e) => log::error!(
                "{} / {} / {} s / trial {}: {e}",
                spec.scenario.name,
                spec.planner,
                spec.budget_seconds,
                spec.trial
            ),
        }
    }

    let mut summary = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let key = |r: &ResultRow| (r.scenario.clone(), r.planner.clone(), r.budget_seconds.to_bits());
        let k = key(&rows[i]);
        let cell: Vec<&ResultRow> = rows[i..].iter().take_while(|r| key(r) == k).collect();
        i += cell.len();
        let s = CellSummary::from_rows(&cell);
        println!(
            "{:<10} {:<7} {:>5} s  progress {:>6.2} ± {:>5.2} %  ({} trials)",
            s.scenario, s.planner, s.budget_seconds, s.mean_progress, s.se_progress, s.trials
        );
        summary.push(s);
    }

    let csv = output_path(config, out, Path::new("results/bench.csv"));
    write_csv(&csv, &rows)?;
    write_csv(&sibling(&csv, "timing.csv"), &timings)?;
    if !calibration.is_empty() {
        write_csv(&sibling(&csv, "calibration.csv"), &calibration)?;
    }
    Ok(BenchOutput { rows, timings, summary, calibration, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub scenario: String,
    pub planner: String,
    pub budget_seconds: f64,
    pub budget_iterations: u64,
    pub plans: usize,
    pub mean_simulate_calls: f64,
    pub min_simulate_calls: u64,
    pub max_simulate_calls: u64,
    /// Per-plan counts in plan order; not written to the CSV.
    #[serde(skip)]
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct CountSimsOutput {
    pub rows: Vec<CountRow>,
    pub calibration: Vec<CalibrationRow>,
    pub csv: PathBuf,
}

/// Simulate calls of single searches from each scenario start, `count_plans`
/// per (planner, budget). Plans run one at a time so wall-clock budgets are not
/// shared between workers.
pub fn cmd_count_sims(config: &HarnessConfig, seed: Option<u64>, out: Option<&Path>) -> Result<CountSimsOutput, HarnessError> {
    let x = &config.experiment;
    let base = seed.unwrap_or(x.seed);
    let planners: Vec<PlannerKind> = x.planners.iter().copied().filter(|p| *p != PlannerKind::Random).collect();
    let model = if planners.contains(&PlannerKind::Npt) { Some(load_model(config)?) } else { None };
    let (rates, calibration) = iteration_rates(config, model.as_ref(), &planners)?;
    let shared = Shared::new(config, model.as_ref())?;
    let mut rows = Vec::new();
    for sc in config.scenario_list()? {
        for &secs in &x.count_budgets {
            for &planner in &planners {
                let budget = budget_for(planner, secs, x.budget_mode, &rates)?;
                let mut counts = Vec::with_capacity(x.count_plans);
                for k in 0..x.count_plans {
                    let mut rng = SimRng::seed_from_u64(base ^ k as u64);
                    counts.push(shared.plan_from_start(planner, &sc, budget, &mut rng)?.simulate_calls);
                }
                let row = CountRow {
                    scenario: sc.name.clone(),
                    planner: planner.to_string(),
                    budget_seconds: secs,
                    budget_iterations: match budget {
                        Budget::Iterations(n) => n,
                        Budget::Seconds(_) => 0,
                    },
                    plans: counts.len(),
                    mean_simulate_calls: counts.iter().sum::<u64>() as f64 / counts.len() as f64,
                    min_simulate_calls: counts.iter().copied().min().unwrap_or(0),
                    max_simulate_calls: counts.iter().copied().max().unwrap_or(0),
                    counts,
                };
                println!("{:<10} {:>5} s  {:<7} {:>12.1} simulate calls", row.scenario, secs, row.planner, row.mean_simulate_calls);
                rows.push(row);
            }
        }
    }
    let csv = output_path(config, out, Path::new("results/count_sims.csv"));
    write_csv(&csv, &rows)?;
    if !calibration.is_empty() {
        write_csv(&sibling(&csv, "calibration.csv"), &calibration)?;
    }
    Ok(CountSimsOutput { rows, calibration, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub before: Pose,
    pub action: Action,
    pub outcome: Pose,
    pub reward: f64,
    pub fallen: bool,
    pub reached: bool,
    pub iterations: u64,
    pub simulate_calls: u64,
}

/// A single episode, written as JSON for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scenario: String,
    pub planner: String,
    pub seed: u64,
    pub budget: Budget,
    pub com: [f64; 2],
    pub start: Pose,
    pub goal: [f64; 2],
    pub steps: Vec<TraceStep>,
    pub terminal: Terminal,
    pub progress_percent: f64,
}

impl EpisodeTrace {
    /// Recomputes every reward from the recorded outcomes; true if all match exactly.
    pub fn replays(&self, scenario: &crate::Scenario) -> bool {
        self.steps.iter().all(|s| reward(s.outcome.position(), scenario) == s.reward)
    }
}

struct Recording<'p> {
    inner: Box<dyn Policy + 'p>,
    decisions: Vec<Decision>,
}

impl Policy for Recording<'_> {
    fn act(&mut self, pose: &Pose, rng: &mut SimRng) -> Result<Decision, String> {
        let d = self.inner.act(pose, rng)?;
        self.decisions.push(d);
        Ok(d)
    }

    fn observe(&mut self, before: &Pose, action: &Action, after: &Pose, rng: &mut SimRng) {
        self.inner.observe(before, action, after, rng);
    }
}

/// Runs one episode and writes its JSON trace.
pub fn cmd_plan_episode(
    config: &HarnessConfig,
    scenario: Option<&str>,
    planner: Option<PlannerKind>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(EpisodeTrace, PathBuf), HarnessError> {
    let x = &config.experiment;
    let sc = match scenario {
        Some(name) => config.scenario(name)?,
        None => config.scenario_list()?.remove(0),
    };
    let planner = planner.unwrap_or(PlannerKind::Npt);
    let seed = seed.unwrap_or(x.seed);
    let model = if planner == PlannerKind::Npt { Some(load_model(config)?) } else { None };
    let (rates, _) = iteration_rates(config, model.as_ref(), &[planner])?;
    let budget = budget_for(planner, x.episode_budget, x.budget_mode, &rates)?;
    let shared = Shared::new(config, model.as_ref())?;

    let mut rng = SimRng::seed_from_u64(seed);
    let block = sample_block(&shared.template, &mut rng);
    let mut policy = Recording { inner: shared.policy(planner, &sc, budget, &mut rng)?, decisions: Vec::new() };
    let result = run_episode(&mut policy, &sc, &block, &shared.dynamics, x.max_steps, &mut rng)?;
    let mut before = result.start;
    let steps = result
        .steps
        .iter()
        .zip(&policy.decisions)
        .enumerate()
        .map(|(i, (s, d))| {
            let t = TraceStep {
                step: i,
                before,
                action: s.action,
                outcome: s.outcome,
                reward: s.reward,
                fallen: s.fallen,
                reached: s.reached,
                iterations: d.stats.iterations,
                simulate_calls: d.stats.simulate_calls,
            };
            before = s.outcome;
            t
        })
        .collect();
    let trace = EpisodeTrace {
        scenario: sc.name.clone(),
        planner: planner.to_string(),
        seed,
        budget,
        com: block.com,
        start: result.start,
        goal: sc.goal,
        steps,
        terminal: result.terminal,
        progress_percent: result.progress_percent,
    };
    let default = PathBuf::from(format!("results/episode-{}-{}-{}.json", sc.name, planner, seed));
    let path = output_path(config, out, &default);
    ensure_parent(&path)?;
    let json = serde_json::to_string_pretty(&trace).expect("trace serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    println!(
        "{} with {}: {} after {} steps, progress {:.1} %; trace {}",
        sc.name,
        planner,
        trace.terminal,
        trace.steps.len(),
        trace.progress_percent,
        path.display()
    );
    Ok((trace, path))
}
