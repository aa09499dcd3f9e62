//! Belief-space planning for pushing a block whose center of mass is unknown.
//!
//! Two online planners share one Monte Carlo tree search with double
//! progressive widening: one carries its belief as a particle filter over the
//! center of mass, the other as the push history fed to a learned neural
//! process encoder. Both run against an analytic quasi-static pushing model.

pub mod env;
pub mod geom;
pub mod harness;
pub mod nn;
pub mod particle;
pub mod planner;
pub mod pnp;
pub mod scalar;

pub use scalar::Real;

/// Deterministic, portable random stream used everywhere in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub type Pose = geom::Pose2D<f64>;
pub type Action = geom::PushAction<f64>;
pub type Block = geom::BlockSpec<f64>;
pub type Twist = geom::Twist2D<f64>;
pub type Noise = geom::NoiseSpec<f64>;
pub type Pusher = geom::Pusher<f64>;
pub type Scenario = env::Scenario<f64>;
pub type Surface = env::Surface<f64>;
