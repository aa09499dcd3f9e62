use super::{plan, BeliefBackend, PlannerConfig, Transition};
use crate::env::{Decision, DecisionStats, Dynamics, Policy};
use crate::geom::simulate_push;
use crate::particle::{ObsModel, ParticleBelief, UpdateKind};
use crate::{Action, Block, Noise, Pose, Pusher, Scenario, SimRng};

pub struct PftBackend {
    pusher: Pusher,
    noise: Noise,
    obs: ObsModel,
    diverged: u64,
}

impl PftBackend {
    pub fn new(dynamics: &Dynamics, obs: ObsModel) -> Self {
        Self { pusher: dynamics.pusher(), noise: dynamics.noise(), obs, diverged: 0 }
    }

    /// Number of in-tree updates that lost every particle and restarted from the prior.
    pub fn divergences(&self) -> u64 {
        self.diverged
    }
}

impl BeliefBackend for PftBackend {
    type Belief = ParticleBelief;
    type Hidden = Block;

    fn simulate_action(&mut self, belief: &ParticleBelief, pose: &Pose, action: &Action, rng: &mut SimRng) -> Transition<ParticleBelief, Block> {
        debug_assert_eq!(belief.pose(), pose);
        let (block, next, child, report) = belief.sample_and_update(action, &self.pusher, &self.noise, &self.obs, rng);
        if report.diverged {
            self.diverged += 1;
        }
        Transition { next, hidden: block, child }
    }

    fn step_hidden(&mut self, block: &Block, pose: &Pose, action: &Action, rng: &mut SimRng) -> Pose {
        simulate_push(pose, block, action, &self.noise, &self.pusher, rng)
    }
}

/// Episode policy that plans over a particle belief and filters the real outcomes.
pub struct PftPolicy<'a> {
    backend: PftBackend,
    belief: ParticleBelief,
    config: PlannerConfig,
    scenario: &'a Scenario,
    dynamics: &'a Dynamics,
}

impl<'a> PftPolicy<'a> {
    pub fn new(belief: ParticleBelief, obs: ObsModel, config: PlannerConfig, scenario: &'a Scenario, dynamics: &'a Dynamics) -> Self {
        Self { backend: PftBackend::new(dynamics, obs), belief, config, scenario, dynamics }
    }

    pub fn belief(&self) -> &ParticleBelief {
        &self.belief
    }
}

impl Policy for PftPolicy<'_> {
    fn act(&mut self, _pose: &Pose, rng: &mut SimRng) -> Result<Decision, String> {
        let pose = *self.belief.pose();
        let r = plan(&mut self.backend, self.belief.clone(), pose, self.scenario, self.dynamics, &self.config, rng);
        Ok(Decision { action: r.action, stats: DecisionStats { iterations: r.iterations, simulate_calls: r.simulate_calls } })
    }

    fn observe(&mut self, _before: &Pose, action: &Action, after: &Pose, rng: &mut SimRng) {
        let (next, report) = self.belief.update(action, after, &self.backend.pusher, &self.backend.obs, UpdateKind::RealStep, rng);
        if report.diverged {
            log::warn!("particle belief diverged on a real step; reinitialised from the prior");
        }
        self.belief = next;
    }
}
