//! Monte Carlo tree search with double progressive widening over beliefs.
//!
//! The search is generic over a [`BeliefBackend`], which knows how to sample a
//! transition from a belief node. Two backends are provided: [`NptBackend`]
//! carries the push history through the learned encoder and [`PftBackend`]
//! carries a weighted particle set over the center of mass.

mod npt;
mod pft;

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use npt::{NptBackend, NptBelief, NptPolicy};
pub use pft::{PftBackend, PftPolicy};

use crate::env::Dynamics;
use crate::{Action, Pose, Scenario, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Iterations(u64),
    Seconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub depth: usize,
    pub gamma: f64,
    pub alpha_obs: f64,
    pub k_action: f64,
    pub alpha_action: f64,
    pub ucb_c: f64,
    pub budget: Budget,
    /// Check widening, depth and visit-count invariants after every iteration.
    pub check_invariants: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            gamma: 0.8,
            alpha_obs: 0.25,
            k_action: 3.0,
            alpha_action: 0.25,
            ucb_c: 100.0,
            budget: Budget::Seconds(1.0),
            check_invariants: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let err = |m: String| Err(PlannerError::Config(m));
        if self.depth == 0 {
            return err("depth must be at least 1".into());
        }
        for (name, v) in [("alpha_obs", self.alpha_obs), ("alpha_action", self.alpha_action)] {
            if !(v > 0.0 && v < 1.0) {
                return err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.k_action > 0.0 && self.k_action.is_finite()) {
            return err(format!("k_action must be positive, got {}", self.k_action));
        }
        if !(self.ucb_c >= 0.0 && self.ucb_c.is_finite()) {
            return err(format!("ucb_c must be non-negative, got {}", self.ucb_c));
        }
        match self.budget {
            Budget::Seconds(s) if !(s > 0.0 && s.is_finite()) => err(format!("budget seconds must be positive, got {s}")),
            _ => Ok(()),
        }
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }
}

/// One sampled transition from a belief node.
pub struct Transition<B, H> {
    pub next: Pose,
    /// Hidden parameter the transition was generated from; reused by the rollout.
    pub hidden: H,
    pub child: B,
}

pub trait BeliefBackend {
    type Belief;
    type Hidden;

    /// Samples a hidden parameter from `belief`, generates the next pose under
    /// `action`, and forms the child belief.
    fn simulate_action(&mut self, belief: &Self::Belief, pose: &Pose, action: &Action, rng: &mut SimRng) -> Transition<Self::Belief, Self::Hidden>;

    /// Generative step with the hidden parameter held fixed.
    fn step_hidden(&mut self, hidden: &Self::Hidden, pose: &Pose, action: &Action, rng: &mut SimRng) -> Pose;
}

type NodeId = usize;
type EdgeId = usize;

struct HistNode<B> {
    n: u64,
    edges: Vec<EdgeId>,
    belief: B,
    pose: Pose,
    terminal: bool,
    depth: usize,
}

struct Outcome {
    reward: f64,
    child: NodeId,
}

struct ActionEdge {
    action: Action,
    n: u64,
    q: f64,
    outcomes: Vec<Outcome>,
    returns: Vec<f64>,
}

/// Counts of broken invariants; all zero in a correct search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolations {
    pub action_widening: u64,
    pub observation_widening: u64,
    pub depth: u64,
    pub visit_count: u64,
    pub q_mean: u64,
}

impl InvariantViolations {
    pub fn total(&self) -> u64 {
        self.action_widening + self.observation_widening + self.depth + self.visit_count + self.q_mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootEdge {
    pub action: Action,
    pub q: f64,
    pub visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: Action,
    pub root: Vec<RootEdge>,
    pub iterations: u64,
    pub simulate_calls: u64,
    pub max_depth: usize,
    pub nodes: usize,
    pub violations: InvariantViolations,
}

/// A search tree for one decision.
pub struct Search<'a, B: BeliefBackend> {
    config: PlannerConfig,
    scenario: &'a Scenario,
    dynamics: &'a Dynamics,
    backend: &'a mut B,
    nodes: Vec<HistNode<B::Belief>>,
    edges: Vec<ActionEdge>,
    simulate_calls: u64,
    max_depth: usize,
    violations: InvariantViolations,
}

impl<'a, B: BeliefBackend> Search<'a, B> {
    pub fn new(
        config: PlannerConfig,
        scenario: &'a Scenario,
        dynamics: &'a Dynamics,
        backend: &'a mut B,
        root_belief: B::Belief,
        root_pose: Pose,
    ) -> Self {
        let p = root_pose.position();
        let root = HistNode {
            n: 1,
            edges: Vec::new(),
            belief: root_belief,
            pose: root_pose,
            terminal: scenario.fallen(p) || scenario.in_range(p),
            depth: 0,
        };
        Self {
            config,
            scenario,
            dynamics,
            backend,
            nodes: vec![root],
            edges: Vec::new(),
            simulate_calls: 0,
            max_depth: 0,
            violations: InvariantViolations::default(),
        }
    }

    /// Runs one iteration from the root and returns its discounted return.
    pub fn iterate(&mut self, rng: &mut SimRng) -> f64 {
        let v = self.simulate(0, self.config.depth, rng);
        if self.config.check_invariants {
            self.check_invariants();
        }
        v
    }

    fn random_action(&self, rng: &mut SimRng) -> Action {
        self.dynamics.action(rng.random_range(0.0..std::f64::consts::TAU))
    }

    fn simulate(&mut self, h: NodeId, d: usize, rng: &mut SimRng) -> f64 {
        if d == 0 || self.nodes[h].terminal {
            return 0.0;
        }
        self.simulate_calls += 1;
        let depth_here = self.nodes[h].depth;
        if depth_here >= self.config.depth {
            self.violations.depth += 1;
        }
        let e = self.action_prog_widen(h, rng);
        let gamma = self.config.gamma;
        let edge = &self.edges[e];
        let total = if (edge.outcomes.len() as f64) <= (edge.n as f64).powf(self.config.alpha_obs) {
            let action = edge.action;
            let pose = self.nodes[h].pose;
            let tr = self.backend.simulate_action(&self.nodes[h].belief, &pose, &action, rng);
            let p = tr.next.position();
            let reward = self.scenario.reward(p);
            let terminal = self.scenario.fallen(p) || self.scenario.in_range(p);
            let child = self.nodes.len();
            self.nodes.push(HistNode { n: 1, edges: Vec::new(), belief: tr.child, pose: tr.next, terminal, depth: depth_here + 1 });
            self.max_depth = self.max_depth.max(depth_here + 1);
            self.edges[e].outcomes.push(Outcome { reward, child });
            let future = if terminal { 0.0 } else { self.rollout(tr.next, &tr.hidden, d - 1, rng) };
            reward + gamma * future
        } else {
            let k = rng.random_range(0..edge.outcomes.len());
            let Outcome { reward, child } = edge.outcomes[k];
            reward + gamma * self.simulate(child, d - 1, rng)
        };
        self.nodes[h].n += 1;
        let edge = &mut self.edges[e];
        edge.n += 1;
        edge.q += (total - edge.q) / edge.n as f64;
        if self.config.check_invariants {
            edge.returns.push(total);
        }
        total
    }

    fn action_prog_widen(&mut self, h: NodeId, rng: &mut SimRng) -> EdgeId {
        let node = &self.nodes[h];
        let limit = self.config.k_action * (node.n as f64).powf(self.config.alpha_action);
        if (node.edges.len() as f64) <= limit {
            let action = self.random_action(rng);
            let e = self.edges.len();
            self.edges.push(ActionEdge { action, n: 0, q: 0.0, outcomes: Vec::new(), returns: Vec::new() });
            self.nodes[h].edges.push(e);
            return e;
        }
        select_ucb(&self.edges, &node.edges, node.n, self.config.ucb_c)
    }

    /// Plays uniformly random pushes with the hidden parameter held fixed.
    fn rollout(&mut self, mut pose: Pose, hidden: &B::Hidden, d: usize, rng: &mut SimRng) -> f64 {
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..d {
            let action = self.random_action(rng);
            pose = self.backend.step_hidden(hidden, &pose, &action, rng);
            let p = pose.position();
            total += discount * self.scenario.reward(p);
            if self.scenario.fallen(p) || self.scenario.in_range(p) {
                break;
            }
            discount *= self.config.gamma;
        }
        total
    }

    fn check_invariants(&mut self) {
        let c = &self.config;
        for node in &self.nodes {
            let n = node.n as f64;
            if node.edges.len() as f64 > (c.k_action * n.powf(c.alpha_action)).ceil() {
                self.violations.action_widening += 1;
            }
            if !node.edges.is_empty() {
                let sum: u64 = node.edges.iter().map(|&e| self.edges[e].n).sum();
                if node.n != sum + 1 {
                    self.violations.visit_count += 1;
                }
            }
            if node.depth > c.depth {
                self.violations.depth += 1;
            }
        }
        for edge in &self.edges {
            if edge.outcomes.len() as f64 > (edge.n as f64).powf(c.alpha_obs).ceil() {
                self.violations.observation_widening += 1;
            }
            if !edge.returns.is_empty() {
                let mean = edge.returns.iter().sum::<f64>() / edge.returns.len() as f64;
                if (mean - edge.q).abs() > 1e-9 * mean.abs().max(1.0) {
                    self.violations.q_mean += 1;
                }
            }
        }
    }

    pub fn root_edges(&self) -> Vec<RootEdge> {
        self.nodes[0]
            .edges
            .iter()
            .map(|&e| RootEdge { action: self.edges[e].action, q: self.edges[e].q, visits: self.edges[e].n })
            .collect()
    }

    pub fn simulate_calls(&self) -> u64 {
        self.simulate_calls
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn violations(&self) -> InvariantViolations {
        self.violations
    }

    /// Root visit count and the visit counts of its action edges.
    pub fn root_visits(&self) -> (u64, Vec<u64>) {
        let root = &self.nodes[0];
        (root.n, root.edges.iter().map(|&e| self.edges[e].n).collect())
    }
}

/// UCB choice among `candidates`; unvisited edges first, ties to the earliest.
fn select_ucb(edges: &[ActionEdge], candidates: &[EdgeId], n_parent: u64, c: f64) -> EdgeId {
    let log_n = (n_parent as f64).ln();
    let mut best = candidates[0];
    let mut best_score = f64::NEG_INFINITY;
    for &e in candidates {
        let edge = &edges[e];
        if edge.n == 0 {
            return e;
        }
        let score = edge.q + c * (log_n / edge.n as f64).sqrt();
        if score > best_score {
            best_score = score;
            best = e;
        }
    }
    best
}

/// Index of the largest Q, ties to the earliest.
pub fn argmax_q(root: &[RootEdge]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in root.iter().enumerate() {
        if best.is_none_or(|b| e.q > root[b].q) {
            best = Some(i);
        }
    }
    best
}

/// Searches from `root_pose` until the budget runs out and returns the best root action.
pub fn plan<B: BeliefBackend>(
    backend: &mut B,
    root_belief: B::Belief,
    root_pose: Pose,
    scenario: &Scenario,
    dynamics: &Dynamics,
    config: &PlannerConfig,
    rng: &mut SimRng,
) -> PlanResult {
    let mut search = Search::new(*config, scenario, dynamics, backend, root_belief, root_pose);
    let mut iterations = 0u64;
    match config.budget {
        Budget::Iterations(n) => {
            for _ in 0..n {
                search.iterate(rng);
                iterations += 1;
            }
        }
        Budget::Seconds(s) => {
            let start = Instant::now();
            while start.elapsed().as_secs_f64() < s {
                search.iterate(rng);
                iterations += 1;
            }
        }
    }
    let root = search.root_edges();
    let action = match argmax_q(&root) {
        Some(i) if iterations > 0 => root[i].action,
        _ => {
            log::warn!("search finished no iterations; choosing a random push");
            search.random_action(rng)
        }
    };
    PlanResult {
        action,
        root,
        iterations,
        simulate_calls: search.simulate_calls,
        max_depth: search.max_depth,
        nodes: search.nodes.len(),
        violations: search.violations,
    }
}
