//! Planar rigid-body types and the quasi-static pushing simulator.
//!
//! The block slides on a table under a point pusher that sticks to its contact
//! point for the whole push. Friction between block and table is modelled with
//! an ellipsoidal limit surface about the center of mass with characteristic
//! length `c`, which yields the closed-form sticking-contact twist in
//! [`quasi_static_twist`]. A push moves the pusher `travel` meters along a
//! fixed world direction at constant `speed`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, wrap_positive, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("push speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("push travel must be positive, got {0}")]
    NonPositiveTravel(f64),
    #[error("block extents must be positive")]
    NonPositiveExtent,
    #[error("block mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("center of mass ({0}, {1}) is not strictly inside the footprint")]
    ComOutsideFootprint(f64, f64),
    #[error("limit surface length must be positive, got {0}")]
    NonPositiveLimitLength(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("noise standard deviations must be non-negative")]
    NegativeNoise,
    #[error("substep count must be at least 1")]
    ZeroSubsteps,
}

/// Planar pose of the block's geometric center. `yaw` is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D<T> {
    pub x: T,
    pub y: T,
    pub yaw: T,
}

impl<T: Real> Pose2D<T> {
    pub fn new(x: T, y: T, yaw: T) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn position(&self) -> [T; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// Maps a body-frame point to the world frame.
    pub fn to_world(&self, p: [T; 2]) -> [T; 2] {
        let r = rotate(p, self.yaw);
        [self.x + r[0], self.y + r[1]]
    }

    /// Applies a displacement expressed in this pose's body frame.
    pub fn compose(&self, delta: &Pose2D<T>) -> Pose2D<T> {
        let p = self.to_world([delta.x, delta.y]);
        Pose2D::new(p[0], p[1], self.yaw + delta.yaw)
    }

    /// Displacement from `earlier` to `self`, expressed in `earlier`'s body frame.
    pub fn relative_to(&self, earlier: &Pose2D<T>) -> Pose2D<T> {
        let d = rotate([self.x - earlier.x, self.y - earlier.y], -earlier.yaw);
        Pose2D::new(d[0], d[1], self.yaw - earlier.yaw)
    }

    pub fn distance_to(&self, p: [T; 2]) -> T {
        let dx = self.x - p[0];
        let dy = self.y - p[1];
        (dx * dx + dy * dy).sqrt()
    }
}

#[inline]
pub(crate) fn rotate<T: Real>(p: [T; 2], angle: T) -> [T; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// A push: world-frame approach direction `theta`, pusher speed and distance travelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushAction<T> {
    pub theta: T,
    pub speed: T,
    pub travel: T,
}

impl<T: Real> PushAction<T> {
    pub const DEFAULT_SPEED: f64 = 0.10;
    pub const DEFAULT_TRAVEL: f64 = 0.15;

    pub fn new(theta: T, speed: T, travel: T) -> Result<Self, GeomError> {
        if !(theta.is_finite() && speed.is_finite() && travel.is_finite()) {
            return Err(GeomError::NonFinite("push action"));
        }
        if speed <= T::zero() {
            return Err(GeomError::NonPositiveSpeed(speed.as_f64()));
        }
        if travel <= T::zero() {
            return Err(GeomError::NonPositiveTravel(travel.as_f64()));
        }
        Ok(Self { theta: wrap_positive(theta), speed, travel })
    }

    /// Push at the default speed and travel.
    pub fn toward(theta: T) -> Self {
        Self::new(theta, T::lit(Self::DEFAULT_SPEED), T::lit(Self::DEFAULT_TRAVEL))
            .expect("default push parameters are valid")
    }

    pub fn direction(&self) -> [T; 2] {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }

    /// Push duration in seconds.
    pub fn duration(&self) -> T {
        self.travel / self.speed
    }
}

/// Rectangular block with a hidden center of mass (body frame, relative to the geometric center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec<T> {
    pub half_extents: [T; 2],
    pub height: T,
    pub mass: T,
    pub com: [T; 2],
}

impl<T: Real> BlockSpec<T> {
    pub fn new(half_extents: [T; 2], height: T, mass: T, com: [T; 2]) -> Result<Self, GeomError> {
        if half_extents.iter().chain(com.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("block"));
        }
        if half_extents[0] <= T::zero() || half_extents[1] <= T::zero() || height <= T::zero() {
            return Err(GeomError::NonPositiveExtent);
        }
        if mass <= T::zero() {
            return Err(GeomError::NonPositiveMass(mass.as_f64()));
        }
        if com[0].abs() >= half_extents[0] || com[1].abs() >= half_extents[1] {
            return Err(GeomError::ComOutsideFootprint(com[0].as_f64(), com[1].as_f64()));
        }
        Ok(Self { half_extents, height, mass, com })
    }

    /// The 2.5 × 2.5 × 1.5 cm, 0.2 kg benchmark block.
    pub fn standard(com: [T; 2]) -> Result<Self, GeomError> {
        Self::new([T::lit(0.0125), T::lit(0.0125)], T::lit(0.015), T::lit(0.2), com)
    }

    pub fn with_com(&self, com: [T; 2]) -> Result<Self, GeomError> {
        Self::new(self.half_extents, self.height, self.mass, com)
    }

    /// Samples a center of mass uniformly over the footprint rectangle (its convex hull).
    pub fn sample_com<R: Rng + ?Sized>(&self, rng: &mut R) -> [T; 2] {
        let hx = self.half_extents[0].as_f64();
        let hy = self.half_extents[1].as_f64();
        loop {
            let cx = rng.random_range(-hx..hx);
            let cy = rng.random_range(-hy..hy);
            // open interval: the lower bound is inclusive for random_range
            if cx > -hx && cy > -hy {
                return [T::lit(cx), T::lit(cy)];
            }
        }
    }
}

impl Default for BlockSpec<f64> {
    fn default() -> Self {
        Self::standard([0.0, 0.0]).expect("standard block is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist2D<T> {
    pub vx: T,
    pub vy: T,
    pub omega: T,
}

/// Zero-mean Gaussian perturbation added to the final pose of a push.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec<T> {
    pub sigma_pos: T,
    pub sigma_yaw: T,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(sigma_pos: T, sigma_yaw: T) -> Result<Self, GeomError> {
        if sigma_pos < T::zero() || sigma_yaw < T::zero() {
            return Err(GeomError::NegativeNoise);
        }
        Ok(Self { sigma_pos, sigma_yaw })
    }

    pub fn zero() -> Self {
        Self { sigma_pos: T::zero(), sigma_yaw: T::zero() }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_pos == T::zero() && self.sigma_yaw == T::zero()
    }
}

impl Default for NoiseSpec<f64> {
    fn default() -> Self {
        Self { sigma_pos: 0.005, sigma_yaw: 0.02 }
    }
}

/// Body-frame contact point: where the ray from the geometric center, pointing
/// against the push direction, leaves the footprint rectangle.
pub fn contact_point<T: Real>(pose: &Pose2D<T>, block: &BlockSpec<T>, action: &PushAction<T>) -> [T; 2] {
    let u = rotate(action.direction(), -pose.yaw);
    let d = [-u[0], -u[1]];
    let mut t = T::infinity();
    for i in 0..2 {
        if d[i] != T::zero() {
            t = t.min(block.half_extents[i] / d[i].abs());
        }
    }
    let mut p = [d[0] * t, d[1] * t];
    // snap the face coordinate exactly onto the boundary
    for i in 0..2 {
        if d[i] != T::zero() && block.half_extents[i] / d[i].abs() == t {
            p[i] = block.half_extents[i] * d[i].signum();
        }
    }
    p
}

/// Sticking point-contact twist of the block about its center of mass.
///
/// `contact_r` is the contact point relative to the COM and `push_dir` the unit
/// pusher direction, both in the same frame; the returned twist is in that frame.
pub fn quasi_static_twist<T: Real>(
    contact_r: [T; 2],
    push_dir: [T; 2],
    speed: T,
    c: T,
) -> Result<Twist2D<T>, GeomError> {
    if !(c > T::zero()) {
        return Err(GeomError::NonPositiveLimitLength(c.as_f64()));
    }
    Ok(sticking_twist(contact_r, push_dir, speed, c * c))
}

#[inline(always)]
fn sticking_twist<T: Real>(r: [T; 2], u: [T; 2], speed: T, c2: T) -> Twist2D<T> {
    let vpx = speed * u[0];
    let vpy = speed * u[1];
    let (rx, ry) = (r[0], r[1]);
    let denom = c2 + rx * rx + ry * ry;
    let vx = ((c2 + rx * rx) * vpx + rx * ry * vpy) / denom;
    let vy = (rx * ry * vpx + (c2 + ry * ry) * vpy) / denom;
    let omega = (rx * vy - ry * vx) / c2;
    Twist2D { vx, vy, omega }
}

/// Integration settings of the pushing model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pusher<T> {
    /// Limit-surface characteristic length `c` in meters.
    pub limit_length: T,
    pub substeps: usize,
}

impl<T: Real> Pusher<T> {
    pub const DEFAULT_LIMIT_LENGTH: f64 = 0.01;
    pub const DEFAULT_SUBSTEPS: usize = 20;

    pub fn new(limit_length: T, substeps: usize) -> Result<Self, GeomError> {
        if !(limit_length > T::zero()) {
            return Err(GeomError::NonPositiveLimitLength(limit_length.as_f64()));
        }
        if substeps == 0 {
            return Err(GeomError::ZeroSubsteps);
        }
        Ok(Self { limit_length, substeps })
    }

    /// Zero-noise outcome of a push.
    pub fn push(&self, pose: &Pose2D<T>, block: &BlockSpec<T>, action: &PushAction<T>) -> Pose2D<T> {
        self.integrate(pose, block, action, |_| {})
    }

    /// Same as [`Pusher::push`] but reports the twist of every derivative evaluation.
    pub fn push_traced(
        &self,
        pose: &Pose2D<T>,
        block: &BlockSpec<T>,
        action: &PushAction<T>,
    ) -> (Pose2D<T>, Vec<Twist2D<T>>) {
        let mut trace = Vec::with_capacity(4 * self.substeps);
        let out = self.integrate(pose, block, action, |tw| trace.push(tw));
        (out, trace)
    }

    fn integrate(
        &self,
        pose: &Pose2D<T>,
        block: &BlockSpec<T>,
        action: &PushAction<T>,
        mut observe: impl FnMut(Twist2D<T>),
    ) -> Pose2D<T> {
        let contact = contact_point(pose, block, action);
        let r = [contact[0] - block.com[0], contact[1] - block.com[1]];
        let u = action.direction();
        let c2 = self.limit_length * self.limit_length;
        let com = block.com;
        let speed = action.speed;

        // world-frame velocity of the geometric center at orientation `yaw`
        let mut deriv = |yaw: T| -> [T; 3] {
            let ub = rotate(u, -yaw);
            let tw = sticking_twist(r, ub, speed, c2);
            observe(tw);
            // v_center = v_com + ω × (center − com), center − com = −com
            let vc = [tw.vx + tw.omega * com[1], tw.vy - tw.omega * com[0]];
            let vw = rotate(vc, yaw);
            [vw[0], vw[1], tw.omega]
        };

        let n = self.substeps;
        let dt = action.duration() / T::from_usize(n).expect("substep count fits scalar");
        let half = T::lit(0.5);
        let sixth = T::lit(1.0 / 6.0);
        let two = T::lit(2.0);
        let (mut x, mut y, mut yaw) = (pose.x, pose.y, pose.yaw);
        // classical RK4; the derivative depends on yaw only
        for _ in 0..n {
            let k1 = deriv(yaw);
            let k2 = deriv(yaw + half * dt * k1[2]);
            let k3 = deriv(yaw + half * dt * k2[2]);
            let k4 = deriv(yaw + dt * k3[2]);
            x = x + sixth * dt * (k1[0] + two * k2[0] + two * k3[0] + k4[0]);
            y = y + sixth * dt * (k1[1] + two * k2[1] + two * k3[1] + k4[1]);
            yaw = yaw + sixth * dt * (k1[2] + two * k2[2] + two * k3[2] + k4[2]);
        }
        Pose2D::new(x, y, yaw)
    }
}

impl Default for Pusher<f64> {
    fn default() -> Self {
        Self { limit_length: Self::DEFAULT_LIMIT_LENGTH, substeps: Self::DEFAULT_SUBSTEPS }
    }
}

/// Pushes the block and perturbs the final pose with the given noise.
pub fn simulate_push<T: Real, R: Rng + ?Sized>(
    pose: &Pose2D<T>,
    block: &BlockSpec<T>,
    action: &PushAction<T>,
    noise: &NoiseSpec<T>,
    pusher: &Pusher<T>,
    rng: &mut R,
) -> Pose2D<T> {
    add_outcome_noise(pusher.push(pose, block, action), noise, rng)
}

/// Perturbs a noiseless push outcome with the simulator's Gaussian noise.
pub fn add_outcome_noise<T: Real, R: Rng + ?Sized>(out: Pose2D<T>, noise: &NoiseSpec<T>, rng: &mut R) -> Pose2D<T> {
    if noise.is_zero() {
        return out;
    }
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nyaw: f64 = rng.sample(StandardNormal);
    Pose2D::new(
        out.x + noise.sigma_pos * T::lit(nx),
        out.y + noise.sigma_pos * T::lit(ny),
        out.yaw + noise.sigma_yaw * T::lit(nyaw),
    )
}
