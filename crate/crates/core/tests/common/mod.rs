#![allow(dead_code)]

use std::path::Path;

use pushpomdp::harness::{BudgetMode, HarnessConfig, PlannerKind};
use pushpomdp::nn::{Activation, Bound, MultiHeadAttention, Mlp, ParamSet, Tape, Tensor, Var};
use pushpomdp::pnp::{PnpConfig, PushRecord};
use rand::Rng;

/// Relative error `|g - fd| / max(|g|, |fd|)` between the tape gradient and
/// central finite differences over every scalar in `params`.
pub fn gradient_check(params: &mut ParamSet, h: f64, build: impl Fn(&mut Tape, &Bound) -> Var) -> f64 {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let loss = build(&mut tape, &p);
    let mut grads = tape.backward(loss).expect("scalar loss");
    let analytic: Vec<f64> = p.collect(params, &mut grads).into_iter().flat_map(Tensor::into_data).collect();

    let eval = |params: &ParamSet| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let loss = build(&mut tape, &p);
        tape.value(loss).item()
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..params.len() {
        for j in 0..params.values()[i].len() {
            let x0 = params.values()[i].data()[j];
            params.values_mut()[i].data_mut()[j] = x0 + h;
            let up = eval(params);
            params.values_mut()[i].data_mut()[j] = x0 - h;
            let down = eval(params);
            params.values_mut()[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    relative_error(&analytic, &numeric)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A small randomly shaped network with its parameters and a fixed input.
pub struct RandomNet {
    pub params: ParamSet,
    pub input: Tensor,
    pub weights: Tensor,
    kind: NetKind,
}

enum NetKind {
    Mlp(Mlp),
    Attention { embed: Mlp, attention: MultiHeadAttention, head: Mlp },
    Gaussian { mean: Mlp, std: Mlp, target: Tensor },
}

fn activation<R: Rng>(rng: &mut R) -> Activation {
    [Activation::Tanh, Activation::Softplus, Activation::Relu][rng.random_range(0..3)]
}

fn tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

impl RandomNet {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let rows = rng.random_range(1..5);
        let inputs = rng.random_range(1..5);
        let mut sizes = vec![inputs];
        for _ in 0..rng.random_range(1..4) {
            sizes.push(rng.random_range(1..6));
        }
        let (kind, out_shape) = match rng.random_range(0..3) {
            0 => {
                let out = *sizes.last().unwrap();
                (NetKind::Mlp(Mlp::new(&mut params, "mlp", &sizes, activation(rng), rng).unwrap()), (rows, out))
            }
            1 => {
                let heads = [1, 2][rng.random_range(0..2)];
                let dim = 2 * rng.random_range(1..3);
                let embed = Mlp::new(&mut params, "embed", &[inputs, dim], Activation::Tanh, rng).unwrap();
                let attention = MultiHeadAttention::new(&mut params, "att", dim, heads, rng).unwrap();
                let head = Mlp::new(&mut params, "head", &[dim, 3, 2], activation(rng), rng).unwrap();
                (NetKind::Attention { embed, attention, head }, (1, 2))
            }
            _ => {
                let out = rng.random_range(1..4);
                let mean = Mlp::new(&mut params, "mean", &[inputs, 4, out], activation(rng), rng).unwrap();
                let std = Mlp::new(&mut params, "std", &[inputs, 3, out], Activation::Tanh, rng).unwrap();
                (NetKind::Gaussian { mean, std, target: tensor(rows, out, rng) }, (1, 1))
            }
        };
        // zero biases put dead ReLU rows exactly on the kink of the next layer
        for t in params.values_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let weights = tensor(out_shape.0, out_shape.1, rng);
        RandomNet { params, input: tensor(rows, inputs, rng), weights, kind }
    }

    /// Scalar loss: a fixed random weighting of the outputs.
    pub fn loss(&self, tape: &mut Tape, p: &Bound) -> Var {
        let x = tape.constant(self.input.clone());
        let out = match &self.kind {
            NetKind::Mlp(m) => m.forward(tape, p, x).unwrap(),
            NetKind::Attention { embed, attention, head } => {
                let h = embed.forward(tape, p, x).unwrap();
                let a = attention.forward(tape, p, h, h).unwrap();
                let h = tape.add(h, a).unwrap();
                let pooled = tape.mean_rows(h);
                head.forward(tape, p, pooled).unwrap()
            }
            NetKind::Gaussian { mean, std, target } => {
                let m = mean.forward(tape, p, x).unwrap();
                let raw = std.forward(tape, p, x).unwrap();
                let s = pushpomdp::nn::gaussian::positive_on_tape(tape, raw, 1.0);
                let t = tape.constant(target.clone());
                pushpomdp::nn::gaussian::logpdf_on_tape(tape, m, s, t).unwrap()
            }
        };
        let w = tape.constant(self.weights.clone());
        let weighted = tape.mul(out, w).unwrap();
        tape.sum(weighted)
    }
}

pub fn random_record<R: Rng>(rng: &mut R) -> PushRecord {
    let th: f64 = rng.random_range(-3.1..3.1);
    PushRecord {
        action: [th.cos(), th.sin(), 0.15],
        outcome: [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-1.0..1.0)],
    }
}

/// A pipeline small enough to run in a second: tiny model, few blocks, iteration budgets.
pub fn small_config(dir: &Path, workers: usize) -> HarnessConfig {
    let mut c = HarnessConfig { base_dir: dir.to_path_buf(), ..HarnessConfig::default() };
    c.scenarios = vec!["open".into()];
    c.pnp.model = PnpConfig { embed_dim: 16, attention_layers: 1, heads: 2, latent_dim: 3, decoder_hidden: vec![32, 32], ..PnpConfig::default() };
    c.pnp.data.blocks = 24;
    c.pnp.data.pushes = 12;
    c.pnp.data.holdout_blocks = 4;
    c.pnp.train.epochs = 3;
    c.pnp.train.batch_size = 4;
    let x = &mut c.experiment;
    x.planners = vec![PlannerKind::Npt, PlannerKind::Pft(10), PlannerKind::Random];
    x.budgets = vec![0.05];
    x.budget_mode = BudgetMode::Iterations;
    x.iterations_per_second = [("npt".to_string(), 1000.0), ("pft10".to_string(), 1000.0)].into();
    x.trials = 3;
    x.max_steps = 8;
    x.workers = Some(workers);
    c
}
