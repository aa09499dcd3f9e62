mod common;

use common::{gradient_check, random_record, RandomNet};
use pushpomdp::nn::{Tape, Tensor};
use pushpomdp::pnp::{PnpConfig, PnpModel};
use pushpomdp::SimRng;
use rand::SeedableRng;

#[test]
fn random_networks_match_finite_differences() {
    let mut rng = SimRng::seed_from_u64(11);
    for i in 0..20 {
        let mut net = RandomNet::sample(&mut rng);
        let mut params = std::mem::take(&mut net.params);
        let err = gradient_check(&mut params, 1e-5, |t, p| net.loss(t, p));
        assert!(err < 1e-4, "network {i}: relative error {err:.3e}");
    }
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let mut rng = SimRng::seed_from_u64(12);
    let model = PnpModel::new(PnpConfig::tiny(), [1.0, 1.0, 1.0], &mut rng).unwrap();
    let targets: Vec<_> = (0..5).map(|_| random_record(&mut rng)).collect();
    let context = targets[..2].to_vec();
    let eps = vec![0.3, -0.7];
    let mut params = model.params().clone();
    let err = gradient_check(&mut params, 1e-6, |t, p| model.elbo_on_tape(t, p, &context, &targets, &eps).unwrap());
    assert!(err < 1e-3, "relative error {err:.3e}");
}

#[test]
fn shared_subexpressions_accumulate() {
    // loss = sum((x + x) * x) = 2 sum(x^2), dloss/dx = 4x
    let mut tape = Tape::new();
    let x = tape.param(Tensor::row(&[1.0, -2.0, 0.5]));
    let s = tape.add(x, x).unwrap();
    let m = tape.mul(s, x).unwrap();
    let loss = tape.sum(m);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0, -8.0, 2.0]);
}
