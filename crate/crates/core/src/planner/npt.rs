use std::cell::OnceCell;
use std::rc::Rc;

use rand_distr::{Distribution, StandardNormal};

use super::{plan, BeliefBackend, PlannerConfig, Transition};
use crate::env::{Decision, DecisionStats, Dynamics, Policy};
use crate::nn::GaussianDiag;
use crate::pnp::{relative_action, DecodeScratch, History, PnpModel, PushRecord};
use crate::{Action, Pose, Scenario, SimRng};

struct NptNode {
    history: History,
    latent: OnceCell<GaussianDiag>,
}

/// Push history of a tree node, with its encoder posterior computed on first use.
///
/// Children whose capped history is unchanged share the parent's posterior.
#[derive(Clone)]
pub struct NptBelief(Rc<NptNode>);

impl NptBelief {
    pub fn new(history: History) -> Self {
        Self(Rc::new(NptNode { history, latent: OnceCell::new() }))
    }

    pub fn history(&self) -> &History {
        &self.0.history
    }

    /// Whether two beliefs share one cached posterior.
    pub fn shares_latent(&self, other: &NptBelief) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

pub struct NptBackend<'m> {
    model: &'m PnpModel,
    scratch: DecodeScratch,
    encodes: u64,
}

impl<'m> NptBackend<'m> {
    pub fn new(model: &'m PnpModel) -> Self {
        Self { model, scratch: DecodeScratch::default(), encodes: 0 }
    }

    /// Number of encoder evaluations so far.
    pub fn encodes(&self) -> u64 {
        self.encodes
    }

    pub fn posterior<'b>(&mut self, belief: &'b NptBelief) -> &'b GaussianDiag {
        let (model, encodes) = (self.model, &mut self.encodes);
        belief.0.latent.get_or_init(|| {
            *encodes += 1;
            model.encode(belief.0.history.records())
        })
    }

    fn sample_outcome(&mut self, z: &[f64], action: [f64; 3], rng: &mut SimRng) -> [f64; 3] {
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        self.model.decode_into(z, action, &mut self.scratch, &mut mean, &mut std);
        std::array::from_fn(|i| {
            let e: f64 = StandardNormal.sample(rng);
            mean[i] + std[i] * e
        })
    }
}

impl BeliefBackend for NptBackend<'_> {
    type Belief = NptBelief;
    type Hidden = Vec<f64>;

    fn simulate_action(&mut self, belief: &NptBelief, pose: &Pose, action: &Action, rng: &mut SimRng) -> Transition<NptBelief, Vec<f64>> {
        let z = self.posterior(belief).sample(rng);
        let a = relative_action(pose, action);
        let o = self.sample_outcome(&z, a, rng);
        let next = PushRecord::apply(o, pose);
        let mut history = belief.history().clone();
        let child = if history.push(PushRecord { action: a, outcome: o }) { NptBelief::new(history) } else { belief.clone() };
        Transition { next, hidden: z, child }
    }

    fn step_hidden(&mut self, z: &Vec<f64>, pose: &Pose, action: &Action, rng: &mut SimRng) -> Pose {
        let o = self.sample_outcome(z, relative_action(pose, action), rng);
        PushRecord::apply(o, pose)
    }
}

/// Episode policy that plans with the learned model and grows the real history.
pub struct NptPolicy<'a> {
    backend: NptBackend<'a>,
    history: History,
    config: PlannerConfig,
    scenario: &'a Scenario,
    dynamics: &'a Dynamics,
}

impl<'a> NptPolicy<'a> {
    pub fn new(model: &'a PnpModel, history: History, config: PlannerConfig, scenario: &'a Scenario, dynamics: &'a Dynamics) -> Self {
        Self { backend: NptBackend::new(model), history, config, scenario, dynamics }
    }

    pub fn history(&self) -> &History {
        &self.history
    }
}

impl Policy for NptPolicy<'_> {
    fn act(&mut self, pose: &Pose, rng: &mut SimRng) -> Result<Decision, String> {
        let belief = NptBelief::new(self.history.clone());
        let r = plan(&mut self.backend, belief, *pose, self.scenario, self.dynamics, &self.config, rng);
        Ok(Decision { action: r.action, stats: DecisionStats { iterations: r.iterations, simulate_calls: r.simulate_calls } })
    }

    fn observe(&mut self, before: &Pose, action: &Action, after: &Pose, _rng: &mut SimRng) {
        self.history.push(PushRecord::from_push(before, action, after));
    }
}
