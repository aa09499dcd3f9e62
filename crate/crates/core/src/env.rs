//! The pushing POMDP: table surfaces, reward, episode execution and the
//! benchmark scenarios.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{simulate_push, NoiseSpec, Pose2D, PushAction, Pusher};
use crate::scalar::Real;
use crate::{Action, Block, Pose, SimRng};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is degenerate (zero area)")]
    DegeneratePolygon,
    #[error("polygon is not convex")]
    NonConvexPolygon,
    #[error("surface has no polygons")]
    EmptySurface,
    #[error("scenario `{0}`: {1} lies off the surface")]
    OffSurface(String, &'static str),
    #[error("goal radius must be positive")]
    BadGoalRadius,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("policy failed at step {step}: {message}")]
    Policy { step: usize, message: String },
    #[error("episode needs at least one step")]
    EmptyEpisode,
    #[error("scenario file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon<T> {
    vertices: Vec<[T; 2]>,
}

fn cross<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

impl<T: Real> ConvexPolygon<T> {
    pub fn new(mut vertices: Vec<[T; 2]>) -> Result<Self, EnvError> {
        let n = vertices.len();
        if n < 3 {
            return Err(EnvError::TooFewVertices(n));
        }
        let mut area2 = T::zero();
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            area2 = area2 + a[0] * b[1] - b[0] * a[1];
        }
        if area2 == T::zero() || !area2.is_finite() {
            return Err(EnvError::DegeneratePolygon);
        }
        if area2 < T::zero() {
            vertices.reverse();
        }
        for i in 0..n {
            let turn = cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
            if turn < T::zero() {
                return Err(EnvError::NonConvexPolygon);
            }
        }
        Ok(Self { vertices })
    }

    pub fn rect(x0: T, y0: T, x1: T, y1: T) -> Result<Self, EnvError> {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: [T; 2]) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= T::zero())
    }
}

/// Union of convex polygons the block may rest on.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface<T> {
    polygons: Vec<ConvexPolygon<T>>,
}

impl<T: Real> Surface<T> {
    pub fn new(polygons: Vec<ConvexPolygon<T>>) -> Result<Self, EnvError> {
        if polygons.is_empty() {
            return Err(EnvError::EmptySurface);
        }
        Ok(Self { polygons })
    }

    pub fn polygons(&self) -> &[ConvexPolygon<T>] {
        &self.polygons
    }

    pub fn contains(&self, p: [T; 2]) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// Prior over the hidden center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComPrior {
    /// Uniform over the footprint rectangle.
    #[default]
    UniformFootprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub surface: Surface<T>,
    pub start: Pose2D<T>,
    pub goal: [T; 2],
    pub goal_radius: T,
    pub com_prior: ComPrior,
}

impl<T: Real> Scenario<T> {
    pub fn new(
        name: impl Into<String>,
        surface: Surface<T>,
        start: Pose2D<T>,
        goal: [T; 2],
        goal_radius: T,
    ) -> Result<Self, EnvError> {
        let name = name.into();
        if !(goal_radius > T::zero()) {
            return Err(EnvError::BadGoalRadius);
        }
        if !surface.contains(start.position()) {
            return Err(EnvError::OffSurface(name, "start"));
        }
        if !surface.contains(goal) {
            return Err(EnvError::OffSurface(name, "goal"));
        }
        Ok(Self { name, surface, start, goal, goal_radius, com_prior: ComPrior::UniformFootprint })
    }

    pub fn goal_distance(&self, p: [T; 2]) -> T {
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn fallen(&self, p: [T; 2]) -> bool {
        !self.surface.contains(p)
    }

    /// Within the goal radius and still on the table.
    pub fn in_range(&self, p: [T; 2]) -> bool {
        !self.fallen(p) && self.goal_distance(p) <= self.goal_radius
    }

    pub fn reward(&self, p: [T; 2]) -> T {
        reward(p, self)
    }
}

/// `-10·d - 100·fallen + 10000·inRange`, with `fallen` taking precedence over `inRange`.
pub fn reward<T: Real>(p: [T; 2], scenario: &Scenario<T>) -> T {
    let fallen = scenario.fallen(p);
    let d = scenario.goal_distance(p);
    let in_range = !fallen && d <= scenario.goal_radius;
    let flag = |b: bool| if b { T::one() } else { T::zero() };
    -T::lit(10.0) * d - T::lit(100.0) * flag(fallen) + T::lit(10000.0) * flag(in_range)
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub start: StartPose,
    pub goal: [f64; 2],
    pub goal_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl TryFrom<ScenarioFile> for Scenario<f64> {
    type Error = EnvError;

    fn try_from(f: ScenarioFile) -> Result<Self, EnvError> {
        let polys = f.polygons.into_iter().map(ConvexPolygon::new).collect::<Result<Vec<_>, _>>()?;
        Scenario::new(f.name, Surface::new(polys)?, Pose::new(f.start.x, f.start.y, f.start.yaw), f.goal, f.goal_radius)
    }
}

impl From<&Scenario<f64>> for ScenarioFile {
    fn from(s: &Scenario<f64>) -> Self {
        ScenarioFile {
            name: s.name.clone(),
            polygons: s.surface.polygons().iter().map(|p| p.vertices().to_vec()).collect(),
            start: StartPose { x: s.start.x, y: s.start.y, yaw: s.start.yaw },
            goal: s.goal,
            goal_radius: s.goal_radius,
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario<f64>, EnvError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io { path: p.clone(), source })?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|source| EnvError::Parse { path: p, source })?;
    file.try_into()
}

pub fn save_scenario(path: &Path, scenario: &Scenario<f64>) -> Result<(), EnvError> {
    let p = path.display().to_string();
    let text = serde_json::to_string_pretty(&ScenarioFile::from(scenario)).expect("scenario serializes");
    std::fs::write(path, text).map_err(|source| EnvError::Io { path: p, source })
}

pub const GOAL_RADIUS: f64 = 0.2;

/// The three benchmark tables: `open`, `corridor` and `ring`.
pub fn builtin_scenarios() -> Vec<Scenario<f64>> {
    let rect = |x0, y0, x1, y1| ConvexPolygon::rect(x0, y0, x1, y1).expect("valid rectangle");
    let open = Scenario::new(
        "open",
        Surface::new(vec![rect(-1.0, -1.0, 1.0, 1.0)]).unwrap(),
        Pose::new(-0.75, 0.0, 0.0),
        [0.75, 0.0],
        GOAL_RADIUS,
    )
    .unwrap();
    // 0.6 m staging pad, then a 1.4 m x 0.3 m strip
    let corridor = Scenario::new(
        "corridor",
        Surface::new(vec![rect(-1.0, -0.3, -0.4, 0.3), rect(-0.4, -0.15, 1.0, 0.15)]).unwrap(),
        Pose::new(-0.7, 0.0, 0.0),
        [0.8, 0.0],
        GOAL_RADIUS,
    )
    .unwrap();
    // staging pad, then a 0.3 m wide path that turns left by a right angle
    let ring = Scenario::new(
        "ring",
        Surface::new(vec![
            rect(-1.0, -0.3, -0.4, 0.3),
            rect(-0.4, -0.15, 0.5, 0.15),
            rect(0.2, -0.15, 0.5, 0.9),
        ])
        .unwrap(),
        Pose::new(-0.7, 0.0, 0.0),
        [0.35, 0.7],
        GOAL_RADIUS,
    )
    .unwrap();
    vec![open, corridor, ring]
}

pub fn builtin_scenario(name: &str) -> Result<Scenario<f64>, EnvError> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| EnvError::UnknownScenario(name.to_string()))
}

/// Waypoints that a straight-line pushing policy follows to solve each built-in scenario.
pub fn reference_waypoints(name: &str) -> Option<Vec<[f64; 2]>> {
    match name {
        "open" => Some(vec![[0.75, 0.0]]),
        "corridor" => Some(vec![[-0.5, 0.0], [0.8, 0.0]]),
        "ring" => Some(vec![[-0.5, 0.0], [0.35, 0.0], [0.35, 0.7]]),
        _ => None,
    }
}

/// Ground-truth dynamics of the real system: pushing model, noise and push parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dynamics {
    pub limit_length: f64,
    pub substeps: usize,
    pub sigma_pos: f64,
    pub sigma_yaw: f64,
    pub speed: f64,
    pub travel: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        let noise = NoiseSpec::default();
        Self {
            limit_length: Pusher::<f64>::DEFAULT_LIMIT_LENGTH,
            substeps: Pusher::<f64>::DEFAULT_SUBSTEPS,
            sigma_pos: noise.sigma_pos,
            sigma_yaw: noise.sigma_yaw,
            speed: Action::DEFAULT_SPEED,
            travel: Action::DEFAULT_TRAVEL,
        }
    }
}

impl Dynamics {
    pub fn pusher(&self) -> Pusher<f64> {
        Pusher::new(self.limit_length, self.substeps).expect("validated dynamics")
    }

    pub fn noise(&self) -> NoiseSpec<f64> {
        NoiseSpec { sigma_pos: self.sigma_pos, sigma_yaw: self.sigma_yaw }
    }

    pub fn action(&self, theta: f64) -> Action {
        PushAction::new(theta, self.speed, self.travel).expect("validated dynamics")
    }

    pub fn noiseless(mut self) -> Self {
        self.sigma_pos = 0.0;
        self.sigma_yaw = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), crate::geom::GeomError> {
        Pusher::new(self.limit_length, self.substeps)?;
        NoiseSpec::new(self.sigma_pos, self.sigma_yaw)?;
        PushAction::new(0.0, self.speed, self.travel)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: Action,
    pub outcome: Pose,
    pub reward: f64,
    pub fallen: bool,
    pub reached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Goal,
    Fallen,
    StepLimit,
}

impl std::fmt::Display for Terminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Terminal::Goal => "goal",
            Terminal::Fallen => "fallen",
            Terminal::StepLimit => "step-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub start: Pose,
    pub steps: Vec<StepRecord>,
    pub progress_percent: f64,
    pub terminal: Terminal,
    pub simulate_calls: u64,
}

/// Executes one real push and scores the result.
pub fn step(
    pose: &Pose,
    block: &Block,
    action: &Action,
    scenario: &Scenario<f64>,
    dynamics: &Dynamics,
    rng: &mut SimRng,
) -> StepRecord {
    let outcome = simulate_push(pose, block, action, &dynamics.noise(), &dynamics.pusher(), rng);
    let p = outcome.position();
    let fallen = scenario.fallen(p);
    StepRecord { action: *action, outcome, reward: reward(p, scenario), fallen, reached: scenario.in_range(p) }
}

/// Planner statistics reported with a decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecisionStats {
    pub iterations: u64,
    pub simulate_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub stats: DecisionStats,
}

/// Anything that picks pushes in an episode and consumes the real outcomes.
pub trait Policy {
    fn act(&mut self, pose: &Pose, rng: &mut SimRng) -> Result<Decision, String>;

    fn observe(&mut self, _before: &Pose, _action: &Action, _after: &Pose, _rng: &mut SimRng) {}
}

/// Runs `policy` until the block reaches the goal, falls, or `max_steps` pushes are made.
pub fn run_episode(
    policy: &mut dyn Policy,
    scenario: &Scenario<f64>,
    block: &Block,
    dynamics: &Dynamics,
    max_steps: usize,
    rng: &mut SimRng,
) -> Result<EpisodeResult, EnvError> {
    let mut pose = scenario.start;
    let mut steps = Vec::with_capacity(max_steps);
    let mut simulate_calls = 0;
    let mut terminal = Terminal::StepLimit;
    for t in 0..max_steps {
        let decision = policy.act(&pose, rng).map_err(|message| EnvError::Policy { step: t, message })?;
        simulate_calls += decision.stats.simulate_calls;
        let rec = step(&pose, block, &decision.action, scenario, dynamics, rng);
        policy.observe(&pose, &decision.action, &rec.outcome, rng);
        pose = rec.outcome;
        steps.push(rec);
        if rec.fallen {
            terminal = Terminal::Fallen;
            break;
        }
        if rec.reached {
            terminal = Terminal::Goal;
            break;
        }
    }
    let progress_percent = if steps.is_empty() { 0.0 } else { progress(&scenario.start, &steps, scenario)? };
    Ok(EpisodeResult { start: scenario.start, steps, progress_percent, terminal, simulate_calls })
}

/// Percent of the initial goal distance covered. A fallen block is scored at its
/// last on-table pose; negative progress is clamped to zero.
pub fn progress(start: &Pose, steps: &[StepRecord], scenario: &Scenario<f64>) -> Result<f64, EnvError> {
    let last = steps.last().ok_or(EnvError::EmptyEpisode)?;
    let d0 = scenario.goal_distance(start.position());
    if d0 == 0.0 {
        return Ok(100.0);
    }
    let final_pose = if last.fallen {
        steps.iter().rev().skip(1).map(|s| s.outcome).find(|o| !scenario.fallen(o.position())).unwrap_or(*start)
    } else {
        last.outcome
    };
    let d = scenario.goal_distance(final_pose.position());
    Ok((100.0 * (d0 - d) / d0).max(0.0))
}

pub fn discounted_return(steps: &[StepRecord], gamma: f64) -> f64 {
    steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
}

/// Pushes straight at a list of waypoints, advancing when within `tolerance` of the current one.
#[derive(Debug, Clone)]
pub struct WaypointPolicy {
    waypoints: Vec<[f64; 2]>,
    next: usize,
    tolerance: f64,
    dynamics: Dynamics,
}

impl WaypointPolicy {
    pub fn new(waypoints: Vec<[f64; 2]>, tolerance: f64, dynamics: Dynamics) -> Self {
        Self { waypoints, next: 0, tolerance, dynamics }
    }
}

impl Policy for WaypointPolicy {
    fn act(&mut self, pose: &Pose, _rng: &mut SimRng) -> Result<Decision, String> {
        while self.next + 1 < self.waypoints.len() && pose.distance_to(self.waypoints[self.next]) <= self.tolerance {
            self.next += 1;
        }
        let w = *self.waypoints.get(self.next).ok_or("no waypoints")?;
        let theta = (w[1] - pose.y).atan2(w[0] - pose.x);
        Ok(Decision { action: self.dynamics.action(theta), stats: DecisionStats::default() })
    }
}

/// Always pushes toward the closest edge of an axis-aligned table of the given half-size.
#[derive(Debug, Clone)]
pub struct NearestEdgePolicy {
    pub half_size: [f64; 2],
    pub dynamics: Dynamics,
}

impl Policy for NearestEdgePolicy {
    fn act(&mut self, pose: &Pose, _rng: &mut SimRng) -> Result<Decision, String> {
        let gaps = [
            (self.half_size[0] - pose.x, 0.0),
            (pose.x + self.half_size[0], PI),
            (self.half_size[1] - pose.y, 0.5 * PI),
            (pose.y + self.half_size[1], 1.5 * PI),
        ];
        let theta = gaps.iter().min_by(|a, b| a.0.total_cmp(&b.0)).map(|g| g.1).unwrap_or(0.0);
        Ok(Decision { action: self.dynamics.action(theta), stats: DecisionStats::default() })
    }
}

/// Uniformly random push directions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub dynamics: Dynamics,
}

impl Policy for RandomPolicy {
    fn act(&mut self, _pose: &Pose, rng: &mut SimRng) -> Result<Decision, String> {
        let theta = rng.random_range(0.0..2.0 * PI);
        Ok(Decision { action: self.dynamics.action(theta), stats: DecisionStats::default() })
    }
}

/// Samples a fresh block for a trial.
pub fn sample_block(template: &Block, rng: &mut SimRng) -> Block {
    let com = template.sample_com(rng);
    template.with_com(com).expect("sampled COM lies inside the footprint")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn open() -> Scenario<f64> {
        builtin_scenario("open").unwrap()
    }

    #[test]
    fn reward_worked_examples() {
        let s = open();
        assert_eq!(reward([0.75, 0.0], &s), 10000.0);
        assert_eq!(reward([0.25, 0.0], &s), -5.0);
        // off the table, 1 m from the goal
        let s2 = Scenario::new(
            "t",
            Surface::new(vec![ConvexPolygon::rect(-1.0, -1.0, 1.0, 1.0).unwrap()]).unwrap(),
            Pose::new(0.0, 0.0, 0.0),
            [0.5, 0.0],
            0.2,
        )
        .unwrap();
        assert_eq!(reward([1.5, 0.0], &s2), -110.0);
    }

    #[test]
    fn fallen_overrides_in_range() {
        let s = Scenario::new(
            "edge",
            Surface::new(vec![ConvexPolygon::rect(0.0, 0.0, 1.0, 1.0).unwrap()]).unwrap(),
            Pose::new(0.5, 0.5, 0.0),
            [0.95, 0.5],
            0.2,
        )
        .unwrap();
        assert!(!s.in_range([1.05, 0.5]));
        assert!((reward([1.05, 0.5], &s) + 101.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_counts_as_surface() {
        let s = open();
        assert!(!s.fallen([1.0, 0.3]));
        assert!(!s.fallen([-1.0, -1.0]));
        assert!(s.fallen([1.0 + 1e-12, 0.0]));
    }

    #[test]
    fn polygon_validation() {
        assert!(matches!(ConvexPolygon::<f64>::new(vec![[0.0, 0.0], [1.0, 0.0]]), Err(EnvError::TooFewVertices(2))));
        assert!(matches!(
            ConvexPolygon::<f64>::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            Err(EnvError::DegeneratePolygon)
        ));
        assert!(matches!(
            ConvexPolygon::<f64>::new(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.2], [1.0, 1.0]]),
            Err(EnvError::NonConvexPolygon)
        ));
        // clockwise input is accepted and reoriented
        let cw = ConvexPolygon::<f64>::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(cw.contains([0.5, 0.5]));
        assert!(Surface::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn step_into_goal() {
        let s = Scenario::new(
            "short",
            Surface::new(vec![ConvexPolygon::rect(-1.0, -1.0, 1.0, 1.0).unwrap()]).unwrap(),
            Pose::new(0.0, 0.0, 0.0),
            [0.15, 0.0],
            0.2,
        )
        .unwrap();
        let dyn0 = Dynamics::default().noiseless();
        let mut rng = SimRng::seed_from_u64(0);
        let rec = step(&s.start, &Block::default(), &dyn0.action(0.0), &s, &dyn0, &mut rng);
        assert!(rec.reached && !rec.fallen);
        assert!((rec.reward - 10000.0).abs() < 1e-9);
    }

    #[test]
    fn step_off_edge() {
        let s = open();
        let dyn0 = Dynamics::default().noiseless();
        let mut rng = SimRng::seed_from_u64(0);
        let pose = Pose::new(-0.95, 0.0, 0.0);
        let rec = step(&pose, &Block::default(), &dyn0.action(PI), &s, &dyn0, &mut rng);
        assert!(rec.fallen && !rec.reached);
        assert!(rec.reward <= -100.0);
    }

    #[test]
    fn step_mid_table_reward() {
        let s = open();
        let d = Dynamics::default();
        let mut rng = SimRng::seed_from_u64(9);
        let block = Block::standard([0.003, -0.004]).unwrap();
        let rec = step(&Pose::new(0.0, 0.1, 0.4), &block, &d.action(2.0), &s, &d, &mut rng);
        let (dx, dy) = (rec.outcome.x - 0.75, rec.outcome.y - 0.0);
        assert_eq!(rec.reward, -10.0 * (dx * dx + dy * dy).sqrt());
    }

    #[test]
    fn progress_examples() {
        let s = Scenario::new(
            "line",
            Surface::new(vec![ConvexPolygon::rect(-5.0, -1.0, 5.0, 1.0).unwrap()]).unwrap(),
            Pose::new(-3.0, 0.0, 0.0),
            [0.0, 0.0],
            0.2,
        )
        .unwrap();
        let rec = |x: f64, fallen| StepRecord {
            action: Action::toward(0.0),
            outcome: Pose::new(x, 0.0, 0.0),
            reward: 0.0,
            fallen,
            reached: false,
        };
        let p = progress(&s.start, &[rec(-1.0, false)], &s).unwrap();
        assert!((p - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(progress(&s.start, &[rec(-3.0, false)], &s).unwrap(), 0.0);
        // moving away is clamped to zero
        assert_eq!(progress(&s.start, &[rec(-4.0, false)], &s).unwrap(), 0.0);
        // fell on the first push: scored at the start pose
        assert_eq!(progress(&s.start, &[rec(-6.0, true)], &s).unwrap(), 0.0);
        // fell after progressing: scored at the last on-table pose
        let p = progress(&s.start, &[rec(-2.0, false), rec(-1.5, false), rec(9.0, true)], &s).unwrap();
        assert!((p - 50.0).abs() < 1e-9);
        assert!(progress(&s.start, &[], &s).is_err());
        let at_goal = Scenario { start: Pose::new(0.0, 0.0, 0.0), ..s.clone() };
        assert_eq!(progress(&at_goal.start, &[rec(1.0, false)], &at_goal).unwrap(), 100.0);
    }

    #[test]
    fn scenario_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for s in builtin_scenarios() {
            let p = dir.path().join(format!("{}.json", s.name));
            save_scenario(&p, &s).unwrap();
            assert_eq!(load_scenario(&p).unwrap(), s);
        }
        std::fs::write(dir.path().join("bad.json"), r#"{"name":"x","polygons":[],"start":{"x":0,"y":0},"goal":[0,0],"goal_radius":0.2}"#).unwrap();
        assert!(matches!(load_scenario(&dir.path().join("bad.json")), Err(EnvError::EmptySurface)));
    }

    #[test]
    fn discounted_return_matches_manual_sum() {
        let mk = |r| StepRecord { action: Action::toward(0.0), outcome: Pose::origin(), reward: r, fallen: false, reached: false };
        let steps = [mk(1.0), mk(2.0), mk(-3.0)];
        assert!((discounted_return(&steps, 0.8) - (1.0 + 0.8 * 2.0 - 0.64 * 3.0)).abs() < 1e-12);
    }
}
