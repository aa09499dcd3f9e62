//! Acceptance criteria, run one at a time so the timing-sensitive ones do not
//! compete for the CPU. Pass criterion numbers to run a subset:
//! `cargo test -p pushpomdp-core --test acceptance -- 1 4 7`.

mod common;

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::{gradient_check, random_record, small_config, RandomNet};
use pushpomdp::env::{builtin_scenarios, Dynamics};
use pushpomdp::geom::simulate_push;
use pushpomdp::harness::{self, BudgetMode, HarnessConfig, PlannerKind};
use pushpomdp::particle::{ObsModel, ParticleBelief, UpdateKind};
use pushpomdp::planner::{plan, Budget, NptBackend, NptBelief, PftBackend, PlannerConfig};
use pushpomdp::pnp::{block_features, eval_context_curve, gen_dataset, History, HistoryCap, PnpConfig, PnpModel, PushRecord};
use pushpomdp::{Action, Block, Pose, Pusher, Scenario, SimRng};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Reference pipeline shared by the learned-model criteria.
struct Reference {
    _dir: TempDir,
    config: HarnessConfig,
    train_seconds: f64,
    holdout: (f64, f64),
}

#[derive(Default)]
struct Ctx {
    reference: Option<Reference>,
}

impl Ctx {
    /// Generates 550 blocks, trains on the first 500 and keeps the checkpoint.
    fn reference(&mut self) -> Result<&Reference, String> {
        if self.reference.is_none() {
            let dir = TempDir::new().map_err(|e| e.to_string())?;
            let mut config = HarnessConfig { base_dir: dir.path().to_path_buf(), ..HarnessConfig::default() };
            config.pnp.data.blocks = 550;
            config.pnp.data.holdout_blocks = 50;
            config.experiment.workers = Some(1);
            harness::cmd_gen_data(&config, None, None).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let out = harness::cmd_train(&config, None, None).map_err(|e| e.to_string())?;
            let train_seconds = start.elapsed().as_secs_f64();
            let ll = |i: usize| out.epochs[i].holdout_loglik.unwrap_or(f64::NAN);
            let holdout = (ll(0), ll(out.epochs.len() - 1));
            self.reference = Some(Reference { _dir: dir, config, train_seconds, holdout });
        }
        Ok(self.reference.as_ref().unwrap())
    }
}

type Check = fn(&mut Ctx) -> Result<Verdict, String>;

const NEEDS_REFERENCE: [u32; 3] = [6, 8, 9];

const CRITERIA: [(u32, &str, f64, Check); 10] = [
    (1, "reward matches an independent oracle", 1.0, reward_oracle),
    (2, "quasi-static pushes match analytic cases and a fine Euler oracle", 10.0, physics),
    (3, "tape gradients match finite differences", 30.0, autodiff),
    (4, "particle filter tracks a grid posterior", 60.0, particle_filter),
    (5, "encoder is permutation invariant and capped at the first 10 pushes", 10.0, encoder),
    (6, "trained model error falls with context", f64::INFINITY, context_curve),
    (7, "search invariants hold over 10000 iterations", 120.0, invariants),
    (8, "simulate calls order NPT > PFT10 > PFT30 > PFT100", 600.0, simulate_calls),
    (9, "NPT beats random and matches PFT100 on open", 1200.0, efficacy),
    (10, "pipeline output is byte identical across runs and worker counts", f64::INFINITY, determinism),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (n, name, limit, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        // the shared reference run is timed by criterion 6 itself, not by whichever criterion builds it
        if NEEDS_REFERENCE.contains(&n) {
            if let Err(e) = ctx.reference() {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: reference run: {e}");
                continue;
            }
        }
        let start = Instant::now();
        let result = check(&mut ctx);
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(v) if secs > limit => (false, format!("{}; took {secs:.1} s, limit {limit} s", v.detail)),
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {n:>2} {} {name}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

// ---------------------------------------------------------------- 1

/// Even-odd ray casting, written without the library's half-plane test.
fn point_in_polygon(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        let (a, b) = (vertices[i], vertices[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn oracle_reward(p: [f64; 2], sc: &Scenario) -> f64 {
    let on_table = sc.surface.polygons().iter().any(|poly| point_in_polygon(poly.vertices(), p));
    let dx = p[0] - sc.goal[0];
    let dy = p[1] - sc.goal[1];
    let d = (dx * dx + dy * dy).sqrt();
    let fallen = if on_table { 0.0 } else { 1.0 };
    let in_range = if on_table && d <= sc.goal_radius { 1.0 } else { 0.0 };
    -10.0 * d - 100.0 * fallen + 10000.0 * in_range
}

fn reward_oracle(_: &mut Ctx) -> Result<Verdict, String> {
    let mut rng = SimRng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut checked = 0;
    for sc in builtin_scenarios() {
        let vs = sc.surface.polygons().iter().flat_map(|p| p.vertices().iter().copied());
        let (lo, hi) = vs.fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), v| {
            ([lo[0].min(v[0]), lo[1].min(v[1])], [hi[0].max(v[0]), hi[1].max(v[1])])
        });
        for i in 0..1000 {
            // a third of the poses land near the goal so the in-range branch is exercised
            let p = if i % 3 == 0 {
                let r = 1.5 * sc.goal_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                [sc.goal[0] + r * a.cos(), sc.goal[1] + r * a.sin()]
            } else {
                [rng.random_range(lo[0] - 0.3..hi[0] + 0.3), rng.random_range(lo[1] - 0.3..hi[1] + 0.3)]
            };
            checked += 1;
            if sc.reward(p).to_bits() != oracle_reward(p, &sc).to_bits() {
                mismatches += 1;
            }
        }
    }
    let open = builtin_scenarios().into_iter().find(|s| s.name == "open").ok_or("no open scenario")?;
    let examples = [([0.75, 0.0], 10000.0), ([0.25, 0.0], -5.0), ([1.75, 0.0], -110.0)];
    let bad_examples = examples.iter().filter(|(p, r)| open.reward(*p) != *r).count();
    Ok(verdict(
        mismatches == 0 && bad_examples == 0,
        format!("{mismatches}/{checked} bitwise mismatches, {bad_examples}/3 worked examples wrong"),
    ))
}

// ---------------------------------------------------------------- 2

fn rot(v: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Explicit Euler on the COM pose with a sticking point contact, `steps` steps.
fn euler_push(pose: &Pose, block: &Block, action: &Action, c: f64, steps: usize) -> Pose {
    // contact: leave the footprint from the center against the push direction
    let u_body = rot([action.theta.cos(), action.theta.sin()], -pose.yaw);
    let d = [-u_body[0], -u_body[1]];
    let tx = if d[0] != 0.0 { block.half_extents[0] / d[0].abs() } else { f64::INFINITY };
    let ty = if d[1] != 0.0 { block.half_extents[1] / d[1].abs() } else { f64::INFINITY };
    let t = tx.min(ty);
    let r = [d[0] * t - block.com[0], d[1] * t - block.com[1]];
    let c2 = c * c;
    let off = rot(block.com, pose.yaw);
    let (mut gx, mut gy, mut yaw) = (pose.x + off[0], pose.y + off[1], pose.yaw);
    let dt = action.travel / action.speed / steps as f64;
    let u = [action.theta.cos(), action.theta.sin()];
    for _ in 0..steps {
        let ub = rot(u, -yaw);
        let vp = [action.speed * ub[0], action.speed * ub[1]];
        let den = c2 + r[0] * r[0] + r[1] * r[1];
        let vx = ((c2 + r[0] * r[0]) * vp[0] + r[0] * r[1] * vp[1]) / den;
        let vy = (r[0] * r[1] * vp[0] + (c2 + r[1] * r[1]) * vp[1]) / den;
        let w = (r[0] * vy - r[1] * vx) / c2;
        let vw = rot([vx, vy], yaw);
        gx += dt * vw[0];
        gy += dt * vw[1];
        yaw += dt * w;
    }
    let off = rot(block.com, yaw);
    Pose::new(gx - off[0], gy - off[1], yaw)
}

fn physics(_: &mut Ctx) -> Result<Verdict, String> {
    let dynamics = Dynamics::default();
    let pusher = dynamics.pusher();
    let template = Block::default();
    let mut rng = SimRng::seed_from_u64(2);
    let mut failures = Vec::new();

    // pushes whose line passes through the COM do not rotate the block
    let mut worst_spin: f64 = 0.0;
    for _ in 0..200 {
        let yaw = rng.random_range(-PI..PI);
        let theta = rng.random_range(-PI..PI);
        let phi = theta - yaw;
        let s = rng.random_range(-0.9..0.9) * 0.0125 * phi.cos().abs().max(phi.sin().abs()).recip();
        let com = [s * phi.cos(), s * phi.sin()];
        let block = template.with_com(com).map_err(|e| e.to_string())?;
        let pose = Pose::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), yaw);
        let out = pusher.push(&pose, &block, &dynamics.action(theta));
        worst_spin = worst_spin.max((out.yaw - yaw).abs());
    }
    if worst_spin >= 1e-9 {
        failures.push(format!("through-COM spin {worst_spin:.2e} rad"));
    }

    // mirrored COM gives the mirrored outcome
    let mut worst_mirror: f64 = 0.0;
    for _ in 0..200 {
        let com = template.sample_com(&mut rng);
        let a = template.with_com(com).map_err(|e| e.to_string())?;
        // push along +x: mirror across the x axis
        let b = template.with_com([com[0], -com[1]]).map_err(|e| e.to_string())?;
        let o = Pose::origin();
        let (pa, pb) = (pusher.push(&o, &a, &dynamics.action(0.0)), pusher.push(&o, &b, &dynamics.action(0.0)));
        worst_mirror = worst_mirror.max((pa.x - pb.x).abs()).max((pa.y + pb.y).abs()).max((pa.yaw + pb.yaw).abs());
        // push along +y: mirror across the y axis
        let b = template.with_com([-com[0], com[1]]).map_err(|e| e.to_string())?;
        let act = dynamics.action(PI / 2.0);
        let (pa, pb) = (pusher.push(&o, &a, &act), pusher.push(&o, &b, &act));
        worst_mirror = worst_mirror.max((pa.x + pb.x).abs()).max((pa.y - pb.y).abs()).max((pa.yaw + pb.yaw).abs());
    }
    if worst_mirror >= 1e-9 {
        failures.push(format!("mirror mismatch {worst_mirror:.2e}"));
    }

    // default integrator against a 2000-step Euler oracle
    let (mut worst_pos, mut worst_yaw): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let block = template.with_com(template.sample_com(&mut rng)).map_err(|e| e.to_string())?;
        let pose = Pose::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-PI..PI));
        let action = dynamics.action(rng.random_range(-PI..PI));
        let got = pusher.push(&pose, &block, &action);
        let want = euler_push(&pose, &block, &action, dynamics.limit_length, 2000);
        worst_pos = worst_pos.max((got.x - want.x).hypot(got.y - want.y));
        worst_yaw = worst_yaw.max((got.yaw - want.yaw).abs());
    }
    if worst_pos >= 1e-3 || worst_yaw >= 1e-2 {
        failures.push(format!("oracle gap {worst_pos:.2e} m / {worst_yaw:.2e} rad"));
    }
    let detail = format!(
        "through-COM spin {worst_spin:.1e} rad, mirror gap {worst_mirror:.1e}, oracle gap {worst_pos:.1e} m / {worst_yaw:.1e} rad"
    );
    Ok(verdict(failures.is_empty(), detail))
}

// ---------------------------------------------------------------- 3

fn autodiff(_: &mut Ctx) -> Result<Verdict, String> {
    let mut rng = SimRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..100 {
        let mut net = RandomNet::sample(&mut rng);
        let mut params = std::mem::take(&mut net.params);
        let err = gradient_check(&mut params, 1e-5, |t, p| net.loss(t, p));
        worst = worst.max(err);
        if !(err < 1e-4) {
            bad += 1;
        }
    }
    let model = PnpModel::new(PnpConfig::tiny(), [1.0, 1.0, 1.0], &mut rng).map_err(|e| e.to_string())?;
    let targets: Vec<_> = (0..6).map(|_| random_record(&mut rng)).collect();
    let context = targets[..3].to_vec();
    let eps = [0.3, -0.7];
    let mut params = model.params().clone();
    let elbo = gradient_check(&mut params, 1e-6, |t, p| model.elbo_on_tape(t, p, &context, &targets, &eps).unwrap());
    Ok(verdict(
        bad == 0 && elbo < 1e-3,
        format!("{bad}/100 networks over 1e-4 (worst {worst:.1e}), ELBO relative error {elbo:.1e}"),
    ))
}

// ---------------------------------------------------------------- 4

/// Posterior mean of the COM on a `cells` x `cells` grid over the footprint.
fn grid_posterior_mean(
    template: &Block,
    start: &Pose,
    steps: &[(Action, Pose)],
    pusher: &Pusher,
    obs: &ObsModel,
    cells: usize,
) -> [f64; 2] {
    let [hx, hy] = template.half_extents;
    let mut points = Vec::with_capacity(cells * cells);
    for i in 0..cells {
        for j in 0..cells {
            let c = [-hx + (i as f64 + 0.5) * 2.0 * hx / cells as f64, -hy + (j as f64 + 0.5) * 2.0 * hy / cells as f64];
            let block = Block { com: c, ..*template };
            let mut pose = *start;
            let mut lw = 0.0;
            for (action, observed) in steps {
                lw += obs.log_likelihood(&pusher.push(&pose, &block, action), observed);
                pose = *observed;
            }
            points.push((c, lw));
        }
    }
    let max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for (c, lw) in points {
        let w = (lw - max).exp();
        sx += w * c[0];
        sy += w * c[1];
        sw += w;
    }
    [sx / sw, sy / sw]
}

fn particle_filter(_: &mut Ctx) -> Result<Verdict, String> {
    let dynamics = Dynamics::default();
    let pusher = dynamics.pusher();
    let noise = dynamics.noise();
    let obs = ObsModel::default();
    let template = Block::default();
    let mut rng = SimRng::seed_from_u64(4);
    let mut errors = Vec::new();
    for _ in 0..20 {
        let block = template.with_com(template.sample_com(&mut rng)).map_err(|e| e.to_string())?;
        let start = Pose::origin();
        let mut belief = ParticleBelief::init_prior(1000, &template, start, &mut rng).map_err(|e| e.to_string())?;
        let mut pose = start;
        let mut steps = Vec::new();
        for _ in 0..5 {
            let action = dynamics.action(rng.random_range(0.0..2.0 * PI));
            let next = simulate_push(&pose, &block, &action, &noise, &pusher, &mut rng);
            belief = belief.update(&action, &next, &pusher, &obs, UpdateKind::RealStep, &mut rng).0;
            steps.push((action, next));
            pose = next;
        }
        let m = belief.mean_com();
        let g = grid_posterior_mean(&template, &start, &steps, &pusher, &obs, 100);
        errors.push((m[0] - g[0]).hypot(m[1] - g[1]));
    }
    let good = errors.iter().filter(|e| **e < 0.0025).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    Ok(verdict(good >= 18, format!("{good}/20 blocks within 2.5 mm of the grid posterior (worst {:.2} mm)", worst * 1e3)))
}

// ---------------------------------------------------------------- 5

fn encoder(_: &mut Ctx) -> Result<Verdict, String> {
    let mut rng = SimRng::seed_from_u64(5);
    let model = PnpModel::new(PnpConfig::default(), block_features(&Block::default()), &mut rng).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut cap_errors = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=15);
        let records: Vec<PushRecord> = (0..len).map(|_| random_record(&mut rng)).collect();
        let history = History::from_records(&records, 10, HistoryCap::KeepFirst);
        let kept = &records[..len.min(10)];
        let base = model.encode(history.records());
        let direct = model.encode(kept);
        if history.records() != kept || base.mean != direct.mean || base.std != direct.std {
            cap_errors += 1;
        }
        let mut shuffled = history.records().to_vec();
        shuffled.shuffle(&mut rng);
        let perm = model.encode(&shuffled);
        for (a, b) in base.mean.iter().chain(&base.std).zip(perm.mean.iter().chain(&perm.std)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(verdict(
        worst < 1e-10 && cap_errors == 0,
        format!("largest permutation change {worst:.1e}, {cap_errors}/1000 cap mismatches"),
    ))
}

// ---------------------------------------------------------------- 6

fn context_curve(ctx: &mut Ctx) -> Result<Verdict, String> {
    let reference = ctx.reference()?;
    let (config, train_seconds, (ll_first, ll_last)) = (reference.config.clone(), reference.train_seconds, reference.holdout);
    let start = Instant::now();
    let curve = harness::cmd_eval_context(&config, None, None).map_err(|e| e.to_string())?;
    let eval_seconds = start.elapsed().as_secs_f64();
    let ratio = curve[10].mean_error / curve[0].mean_error;

    // the same evaluation on an untrained network
    let template = config.simulator.block.block().map_err(|e| e.to_string())?;
    let mut rng = SimRng::seed_from_u64(config.pnp.init_seed);
    let untrained = PnpModel::new(config.pnp.model.clone(), block_features(&template), &mut rng).map_err(|e| e.to_string())?;
    let e = &config.pnp.eval;
    let mut rng = SimRng::seed_from_u64(e.seed);
    let data = gen_dataset(e.blocks, e.pushes, &template, &config.simulator.dynamics, &mut rng).map_err(|e| e.to_string())?;
    let control = eval_context_curve(&untrained, &data, e.max_context).map_err(|e| e.to_string())?;
    let control_ratio = control[10].mean_error / control[0].mean_error;
    Ok(verdict(
        ratio <= 0.7 && control_ratio > 0.9 && curve[0].blocks >= 200 && train_seconds <= 1800.0 && eval_seconds <= 120.0,
        format!(
            "error {:.2} mm at 0 pushes, {:.2} mm at 10, ratio {ratio:.3} over {} blocks; untrained ratio {control_ratio:.3}; \
             holdout ll {ll_first:.2} -> {ll_last:.2}; training {train_seconds:.0} s, evaluation {eval_seconds:.1} s",
            curve[0].mean_error * 1e3,
            curve[10].mean_error * 1e3,
            curve[0].blocks
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn invariants(_: &mut Ctx) -> Result<Verdict, String> {
    let dynamics = Dynamics::default();
    let scenarios = builtin_scenarios();
    let sc = &scenarios[0];
    let config = PlannerConfig { budget: Budget::Iterations(10_000), check_invariants: true, ..PlannerConfig::default() };
    let template = Block::default();
    let mut rng = SimRng::seed_from_u64(7);
    let model = PnpModel::new(PnpConfig::default(), block_features(&template), &mut rng).map_err(|e| e.to_string())?;

    let mut backend = NptBackend::new(&model);
    let npt = plan(&mut backend, NptBelief::new(History::new(10, HistoryCap::KeepFirst)), sc.start, sc, &dynamics, &config, &mut rng);
    let mut backend = PftBackend::new(&dynamics, ObsModel::default());
    let prior = ParticleBelief::init_prior(100, &template, sc.start, &mut rng).map_err(|e| e.to_string())?;
    let pft = plan(&mut backend, prior, sc.start, sc, &dynamics, &config, &mut rng);

    let ok = |r: &pushpomdp::planner::PlanResult| r.violations.total() == 0 && r.max_depth <= 3 && r.iterations == 10_000;
    Ok(verdict(
        ok(&npt) && ok(&pft),
        format!(
            "npt {} violations, depth {}; pft100 {} violations, depth {}",
            npt.violations.total(),
            npt.max_depth,
            pft.violations.total(),
            pft.max_depth
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn simulate_calls(ctx: &mut Ctx) -> Result<Verdict, String> {
    let mut config = ctx.reference()?.config.clone();
    let out_dir = TempDir::new().map_err(|e| e.to_string())?;
    config.scenarios = vec!["open".into()];
    let x = &mut config.experiment;
    x.planners = vec![PlannerKind::Npt, PlannerKind::Pft(10), PlannerKind::Pft(30), PlannerKind::Pft(100)];
    x.budget_mode = BudgetMode::Calibrated;
    x.count_budgets = vec![1.0, 5.0];
    x.count_plans = 10;
    let out = harness::cmd_count_sims(&config, None, Some(&out_dir.path().join("count.csv"))).map_err(|e| e.to_string())?;

    let mut broken = 0;
    let mut means = Vec::new();
    for secs in [1.0, 5.0] {
        let row = |p: &str| out.rows.iter().find(|r| r.planner == p && r.budget_seconds == secs).ok_or(format!("no {p} row"));
        let rows = [row("npt")?, row("pft10")?, row("pft30")?, row("pft100")?];
        for k in 0..10 {
            if !rows.windows(2).all(|w| w[0].counts[k] > w[1].counts[k]) {
                broken += 1;
            }
        }
        means.push(rows.map(|r| format!("{:.0}", r.mean_simulate_calls)).join("/"));
    }
    let spc = |p: &str| out.calibration.iter().find(|r| r.planner == p).map(|r| r.seconds_per_call);
    let ratio = match (spc("pft100"), spc("pft10")) {
        (Some(a), Some(b)) => a / b,
        _ => return Err("calibration rows missing".into()),
    };
    Ok(verdict(
        broken == 0 && ratio >= 5.0,
        format!(
            "{broken}/20 plans out of order; mean calls at 1 s {}, at 5 s {}; pft100/pft10 cost per call {ratio:.2}",
            means[0], means[1]
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn efficacy(ctx: &mut Ctx) -> Result<Verdict, String> {
    let mut config = ctx.reference()?.config.clone();
    let out_dir = TempDir::new().map_err(|e| e.to_string())?;
    config.scenarios = vec!["open".into()];
    let x = &mut config.experiment;
    x.planners = vec![PlannerKind::Npt, PlannerKind::Pft(100), PlannerKind::Random];
    x.budgets = vec![2.0];
    x.budget_mode = BudgetMode::Calibrated;
    x.trials = 15;
    let out = harness::cmd_bench(&config, None, Some(&out_dir.path().join("bench.csv"))).map_err(|e| e.to_string())?;
    let mean = |p: &str| out.summary.iter().find(|s| s.planner == p).map(|s| (s.mean_progress, s.trials));
    let (Some((npt, n1)), Some((pft, n2)), Some((random, n3))) = (mean("npt"), mean("pft100"), mean("random")) else {
        return Err("missing summary cells".into());
    };
    if (n1, n2, n3) != (15, 15, 15) {
        return Err(format!("episodes failed: trial counts {n1}/{n2}/{n3}"));
    }
    Ok(verdict(
        npt - random >= 20.0 && npt >= pft,
        format!("mean progress npt {npt:.1} %, pft100 {pft:.1} %, random {random:.1} %"),
    ))
}

// ---------------------------------------------------------------- 10

fn pipeline_bytes(workers: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let config = small_config(dir.path(), workers);
    let s = |e: harness::HarnessError| e.to_string();
    let (data, _) = harness::cmd_gen_data(&config, None, None).map_err(s)?;
    let trained = harness::cmd_train(&config, None, None).map_err(s)?;
    let bench = harness::cmd_bench(&config, None, None).map_err(s)?;
    let files: [PathBuf; 5] =
        [data, trained.checkpoint.clone(), trained.checkpoint.with_extension("bin"), trained.loss_csv, bench.csv];
    files
        .iter()
        .map(|p| {
            let name = p.strip_prefix(dir.path()).unwrap_or(p).display().to_string();
            std::fs::read(p).map(|b| (name, b)).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect()
}

fn determinism(_: &mut Ctx) -> Result<Verdict, String> {
    let a = pipeline_bytes(1)?;
    let b = pipeline_bytes(3)?;
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    Ok(verdict(
        differing.is_empty() && a.iter().all(|f| !f.1.is_empty()),
        if differing.is_empty() {
            format!("identical: {}", names.join(", "))
        } else {
            format!("differ: {}", differing.join(", "))
        },
    ))
}
