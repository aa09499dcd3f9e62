//! Diagonal Gaussians: closed-form densities and divergences, plus taped
//! versions for training.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{AutodiffError, Tape, Var};
use super::tensor::Tensor;
use crate::Real;

/// Lower bound added to every standard deviation produced from raw outputs.
pub const STD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag<T = f64> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> GaussianDiag<T> {
    pub fn new(mean: Vec<T>, std: Vec<T>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std dims differ");
        Self { mean, std }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![T::zero(); dim], vec![T::one(); dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn logpdf(&self, x: &[T]) -> T {
        gaussian_logpdf(&self.mean, &self.std, x)
    }

    pub fn kl(&self, other: &Self) -> T {
        kl_diag(&self.mean, &self.std, &other.mean, &other.std)
    }

    /// `μ + σ ⊙ ε` with `ε ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * T::lit(e)
            })
            .collect()
    }
}

pub fn gaussian_logpdf<T: Real>(mean: &[T], std: &[T], x: &[T]) -> T {
    assert!(mean.len() == std.len() && std.len() == x.len(), "dims differ");
    let half_log_2pi = T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
    let mut acc = T::zero();
    for i in 0..x.len() {
        let z = (x[i] - mean[i]) / std[i];
        acc = acc - half_log_2pi - std[i].ln() - T::lit(0.5) * z * z;
    }
    acc
}

/// `KL(N(m1, s1²) ‖ N(m2, s2²))` summed over dimensions.
pub fn kl_diag<T: Real>(m1: &[T], s1: &[T], m2: &[T], s2: &[T]) -> T {
    assert!(m1.len() == s1.len() && m2.len() == s2.len() && m1.len() == m2.len(), "dims differ");
    let half = T::lit(0.5);
    let mut acc = T::zero();
    for i in 0..m1.len() {
        let d = m1[i] - m2[i];
        acc = acc + (s2[i] / s1[i]).ln() + (s1[i] * s1[i] + d * d) / (T::lit(2.0) * s2[i] * s2[i]) - half;
    }
    acc
}

/// Taped log-density summed over all entries. Shapes of `mean`, `std` and `x` must agree.
pub fn logpdf_on_tape(tape: &mut Tape, mean: Var, std: Var, x: Var) -> Result<Var, AutodiffError> {
    let n = tape.value(x).len() as f64;
    let diff = tape.sub(x, mean)?;
    let z = tape.div(diff, std)?;
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let log_s = tape.ln(std);
    let terms = tape.sub(quad, log_s)?;
    let total = tape.sum(terms);
    Ok(tape.add_scalar(total, -0.5 * (2.0 * std::f64::consts::PI).ln() * n))
}

/// Taped `KL(q1 ‖ q2)` summed over all entries.
pub fn kl_on_tape(tape: &mut Tape, m1: Var, s1: Var, m2: Var, s2: Var) -> Result<Var, AutodiffError> {
    let n = tape.value(m1).len() as f64;
    let log_ratio = {
        let a = tape.ln(s2);
        let b = tape.ln(s1);
        tape.sub(a, b)?
    };
    let d = tape.sub(m1, m2)?;
    let d2 = tape.square(d);
    let v1 = tape.square(s1);
    let num = tape.add(v1, d2)?;
    let v2 = tape.square(s2);
    let den = tape.scale(v2, 2.0);
    let frac = tape.div(num, den)?;
    let terms = tape.add(log_ratio, frac)?;
    let total = tape.sum(terms);
    Ok(tape.add_scalar(total, -0.5 * n))
}

/// Taped positivity transform `softplus(raw) · scale + floor`.
pub fn positive_on_tape(tape: &mut Tape, raw: Var, scale: f64) -> Var {
    let sp = tape.softplus(raw);
    let sp = if scale == 1.0 { sp } else { tape.scale(sp, scale) };
    tape.add_scalar(sp, STD_FLOOR)
}

/// Taped reparameterised draw `mean + std ⊙ eps`; `eps` is fixed noise.
pub fn reparam_on_tape(tape: &mut Tape, mean: Var, std: Var, eps: Tensor) -> Result<Var, AutodiffError> {
    let e = tape.constant(eps);
    let noise = tape.mul(std, e)?;
    tape.add(mean, noise)
}
