//! Weighted-particle belief over the block's center of mass.
//!
//! Particles whose normalized weight drops below [`DEACTIVATION_THRESHOLD`]
//! are switched off and take no further part in normalization, prediction or
//! sampling. Updates made inside the search tree never resample; updates from
//! real pushes resample systematically once the effective sample size falls
//! below half the particle count.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{add_outcome_noise, Pose2D};
use crate::scalar::{wrap_angle, Real};
use crate::{Action, Block, Noise, Pose, Pusher};

pub const DEACTIVATION_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticleError {
    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("observation model standard deviations must be positive")]
    BadObsModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub com: [f64; 2],
    pub weight: f64,
    pub active: bool,
}

/// Independent Gaussian observation noise on x, y and wrapped yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsModel {
    pub sigma_pos: f64,
    pub sigma_yaw: f64,
}

impl Default for ObsModel {
    fn default() -> Self {
        Self { sigma_pos: 0.01, sigma_yaw: 0.05 }
    }
}

impl ObsModel {
    pub fn new(sigma_pos: f64, sigma_yaw: f64) -> Result<Self, ParticleError> {
        if !(sigma_pos > 0.0 && sigma_yaw > 0.0) {
            return Err(ParticleError::BadObsModel);
        }
        Ok(Self { sigma_pos, sigma_yaw })
    }

    pub fn likelihood(&self, predicted: &Pose, observed: &Pose) -> f64 {
        likelihood(self.sigma_pos, self.sigma_yaw, predicted, observed)
    }

    pub fn log_likelihood(&self, predicted: &Pose, observed: &Pose) -> f64 {
        log_likelihood(self.sigma_pos, self.sigma_yaw, predicted, observed)
    }
}

/// Density of `observed` under independent Gaussians centered on `predicted`.
pub fn likelihood<T: Real>(sigma_pos: T, sigma_yaw: T, predicted: &Pose2D<T>, observed: &Pose2D<T>) -> T {
    log_likelihood(sigma_pos, sigma_yaw, predicted, observed).exp()
}

pub fn log_likelihood<T: Real>(sigma_pos: T, sigma_yaw: T, predicted: &Pose2D<T>, observed: &Pose2D<T>) -> T {
    let half = T::lit(0.5);
    let dx = (observed.x - predicted.x) / sigma_pos;
    let dy = (observed.y - predicted.y) / sigma_pos;
    let dyaw = wrap_angle(observed.yaw - predicted.yaw) / sigma_yaw;
    let log_norm = T::lit(1.5) * T::TAU().ln() + T::lit(2.0) * sigma_pos.ln() + sigma_yaw.ln();
    -half * (dx * dx + dy * dy + dyaw * dyaw) - log_norm
}

/// Where an update comes from: a simulated observation inside the search tree
/// or a real push executed in the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Tree,
    RealStep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateReport {
    /// Every particle was deactivated and the belief was reset to the prior.
    pub diverged: bool,
    pub resampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    particles: Vec<Particle>,
    pose: Pose,
    template: Block,
}

impl ParticleBelief {
    /// `n` particles drawn uniformly over the block footprint, equally weighted.
    pub fn init_prior<R: Rng + ?Sized>(n: usize, block: &Block, pose: Pose, rng: &mut R) -> Result<Self, ParticleError> {
        if n == 0 {
            return Err(ParticleError::NoParticles);
        }
        let w = 1.0 / n as f64;
        let particles = (0..n).map(|_| Particle { com: block.sample_com(rng), weight: w, active: true }).collect();
        Ok(Self { particles, pose, template: *block })
    }

    /// Builds a belief from explicit particles; weights of active particles are normalized.
    pub fn from_particles(mut particles: Vec<Particle>, block: &Block, pose: Pose) -> Result<Self, ParticleError> {
        let total: f64 = particles.iter().filter(|p| p.active).map(|p| p.weight).sum();
        if particles.is_empty() || !(total > 0.0) {
            return Err(ParticleError::NoParticles);
        }
        for p in particles.iter_mut() {
            if p.active {
                p.weight /= total;
            } else {
                p.weight = 0.0;
            }
        }
        Ok(Self { particles, pose, template: *block })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.particles.iter().filter(|p| p.active).count()
    }

    pub fn block_for(&self, com: [f64; 2]) -> Block {
        Block { com, ..self.template }
    }

    pub fn mean_com(&self) -> [f64; 2] {
        self.particles.iter().filter(|p| p.active).fold([0.0, 0.0], |acc, p| {
            [acc[0] + p.weight * p.com[0], acc[1] + p.weight * p.com[1]]
        })
    }

    pub fn effective_sample_size(&self) -> f64 {
        let s2: f64 = self.particles.iter().filter(|p| p.active).map(|p| p.weight * p.weight).sum();
        1.0 / s2
    }

    /// Reweights by the likelihood of `observed` after pushing with `action` from the current pose.
    pub fn update<R: Rng + ?Sized>(
        &self,
        action: &Action,
        observed: &Pose,
        pusher: &Pusher,
        obs: &ObsModel,
        kind: UpdateKind,
        rng: &mut R,
    ) -> (ParticleBelief, UpdateReport) {
        let predicted = self.predict(action, pusher);
        self.reweight(&predicted, observed, obs, kind, rng)
    }

    /// Tree transition: draws a COM, observes its noisy push outcome and
    /// updates on that observation. The drawn particle's noiseless prediction
    /// is the outcome before noise, so this costs one push per active particle.
    /// Returns the drawn block, the observation, the child belief and the report.
    pub fn sample_and_update<R: Rng + ?Sized>(
        &self,
        action: &Action,
        pusher: &Pusher,
        noise: &Noise,
        obs: &ObsModel,
        rng: &mut R,
    ) -> (Block, Pose, ParticleBelief, UpdateReport) {
        let i = self.sample_index(rng);
        let predicted = self.predict(action, pusher);
        let observed = add_outcome_noise(predicted[i], noise, rng);
        let (child, report) = self.reweight(&predicted, &observed, obs, UpdateKind::Tree, rng);
        (self.block_for(self.particles[i].com), observed, child, report)
    }

    /// Zero-noise outcome per particle; inactive slots hold the current pose.
    fn predict(&self, action: &Action, pusher: &Pusher) -> Vec<Pose> {
        self.particles
            .iter()
            .map(|p| if p.active { pusher.push(&self.pose, &self.block_for(p.com), action) } else { self.pose })
            .collect()
    }

    fn reweight<R: Rng + ?Sized>(
        &self,
        predicted: &[Pose],
        observed: &Pose,
        obs: &ObsModel,
        kind: UpdateKind,
        rng: &mut R,
    ) -> (ParticleBelief, UpdateReport) {
        let mut particles = self.particles.clone();
        let mut max_lw = f64::NEG_INFINITY;
        for (p, predicted) in particles.iter_mut().zip(predicted).filter(|(p, _)| p.active) {
            // log-domain weights until normalization to avoid underflow
            p.weight = p.weight.ln() + obs.log_likelihood(predicted, observed);
            max_lw = max_lw.max(p.weight);
        }
        let mut report = UpdateReport::default();
        let ok = max_lw.is_finite() && normalize_log(&mut particles, max_lw);
        if !ok {
            let mut fresh = ParticleBelief::init_prior(self.particles.len(), &self.template, *observed, rng)
                .expect("non-empty belief");
            fresh.pose = *observed;
            report.diverged = true;
            return (fresh, report);
        }
        let mut next = ParticleBelief { particles, pose: *observed, template: self.template };
        if kind == UpdateKind::RealStep && next.effective_sample_size() < 0.5 * next.particles.len() as f64 {
            next.resample_systematic(rng);
            report.resampled = true;
        }
        (next, report)
    }

    /// Draws an active particle with probability proportional to its weight.
    pub fn sample_com<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        self.particles[self.sample_index(rng)].com
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut last = None;
        for (i, p) in self.particles.iter().enumerate().filter(|(_, p)| p.active) {
            acc += p.weight;
            last = Some(i);
            if u < acc {
                return i;
            }
        }
        last.expect("belief has an active particle")
    }

    fn resample_systematic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.particles.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random::<f64>() * step;
        let active: Vec<&Particle> = self.particles.iter().filter(|p| p.active).collect();
        let mut out = Vec::with_capacity(n);
        let mut acc = active[0].weight;
        let mut i = 0;
        for _ in 0..n {
            while u > acc && i + 1 < active.len() {
                i += 1;
                acc += active[i].weight;
            }
            out.push(Particle { com: active[i].com, weight: step, active: true });
            u += step;
        }
        self.particles = out;
    }
}

/// Turns log-weights of active particles into normalized weights, then applies
/// the deactivation rule and renormalizes. Returns false if nothing survives.
fn normalize_log(particles: &mut [Particle], max_lw: f64) -> bool {
    let mut total = 0.0;
    for p in particles.iter_mut().filter(|p| p.active) {
        p.weight = (p.weight - max_lw).exp();
        total += p.weight;
    }
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    let mut kept = 0.0;
    for p in particles.iter_mut().filter(|p| p.active) {
        p.weight /= total;
        if p.weight < DEACTIVATION_THRESHOLD {
            p.active = false;
            p.weight = 0.0;
        } else {
            kept += p.weight;
        }
    }
    if kept <= 0.0 {
        return false;
    }
    for p in particles.iter_mut().filter(|p| p.active) {
        p.weight /= kept;
    }
    true
}
