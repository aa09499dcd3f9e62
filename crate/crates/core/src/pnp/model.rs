use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PnpError, PushRecord, POS_SCALE, TRAVEL_SCALE};
use crate::nn::gaussian::{self, STD_FLOOR};
use crate::nn::kernel::row_times_matrix;
use crate::nn::layers::softmax_rows_in_place;
use crate::nn::{softplus, Activation, Bound, GaussianDiag, Mlp, MultiHeadAttention, ParamId, ParamSet, Tape, Tensor, Var};
use crate::Block;

/// Scale applied to the decoder's raw (Δx, Δy, Δyaw) outputs.
pub const OUTCOME_SCALE: [f64; 3] = [POS_SCALE, POS_SCALE, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnpConfig {
    pub embed_dim: usize,
    pub attention_layers: usize,
    pub heads: usize,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            attention_layers: 2,
            heads: 4,
            latent_dim: 5,
            decoder_hidden: vec![128, 128, 128],
            activation: Activation::Relu,
        }
    }
}

impl PnpConfig {
    /// Small network used for gradient checks.
    pub fn tiny() -> Self {
        Self { embed_dim: 8, attention_layers: 1, heads: 1, latent_dim: 2, decoder_hidden: vec![8], activation: Activation::Relu }
    }
}

/// Observable block features, normalised so the standard block maps to ones.
pub fn block_features(block: &Block) -> [f64; 3] {
    [block.half_extents[0] / 0.0125, block.half_extents[1] / 0.0125, block.height / 0.015]
}

pub const TOKEN_DIM: usize = 9;
const ACTION_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelfAttentionBlock {
    attention: MultiHeadAttention,
    feed_forward: Mlp,
}

/// Encoder and decoder of the pushing neural process.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpModel {
    config: PnpConfig,
    features: [f64; 3],
    params: ParamSet,
    embed: Mlp,
    blocks: Vec<SelfAttentionBlock>,
    default_token: ParamId,
    head: Mlp,
    decoder: Mlp,
}

/// Taped posterior parameters, each `1×latent_dim`.
#[derive(Debug, Clone, Copy)]
pub struct TapedLatent {
    pub mean: Var,
    pub std: Var,
}

impl PnpModel {
    pub fn new<R: Rng + ?Sized>(config: PnpConfig, features: [f64; 3], rng: &mut R) -> Result<Self, PnpError> {
        let e = config.embed_dim;
        let act = config.activation;
        let mut params = ParamSet::new();
        let embed = Mlp::new(&mut params, "embed", &[TOKEN_DIM, e, e], act, rng)?;
        let mut blocks = Vec::with_capacity(config.attention_layers);
        for i in 0..config.attention_layers {
            let attention = MultiHeadAttention::new(&mut params, &format!("sa{i}.att"), e, config.heads, rng)?;
            let feed_forward = Mlp::new(&mut params, &format!("sa{i}.ff"), &[e, e, e], act, rng)?;
            blocks.push(SelfAttentionBlock { attention, feed_forward });
        }
        let default_token = params.add("default_token", Tensor::zeros(1, e));
        let head = Mlp::new(&mut params, "head", &[e, e, 2 * config.latent_dim], act, rng)?;
        let mut sizes = vec![config.latent_dim + ACTION_DIM];
        sizes.extend_from_slice(&config.decoder_hidden);
        sizes.push(6);
        let decoder = Mlp::new(&mut params, "decoder", &sizes, act, rng)?;
        Ok(Self { config, features, params, embed, blocks, default_token, head, decoder })
    }

    pub fn config(&self) -> &PnpConfig {
        &self.config
    }

    pub fn features(&self) -> [f64; 3] {
        self.features
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn tokens(&self, records: &[PushRecord]) -> Tensor {
        let x = self.features;
        let mut data = Vec::with_capacity(records.len() * TOKEN_DIM);
        for r in records {
            let [c, s, travel] = r.action;
            let [dx, dy, dyaw] = r.outcome;
            data.extend_from_slice(&[c, s, travel / TRAVEL_SCALE, dx / POS_SCALE, dy / POS_SCALE, dyaw, x[0], x[1], x[2]]);
        }
        Tensor::new(records.len(), TOKEN_DIM, data)
    }

    fn action_row(&self, action: [f64; 3], out: &mut Vec<f64>) {
        let x = self.features;
        out.extend_from_slice(&[action[0], action[1], action[2] / TRAVEL_SCALE, x[0], x[1], x[2]]);
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, p: &Bound, records: &[PushRecord]) -> Result<TapedLatent, PnpError> {
        let pooled = if records.is_empty() {
            p.var(self.default_token)
        } else {
            let tokens = tape.constant(self.tokens(records));
            let mut h = self.embed.forward(tape, p, tokens)?;
            for block in &self.blocks {
                let a = block.attention.forward(tape, p, h, h)?;
                h = tape.add(h, a)?;
                let f = block.feed_forward.forward(tape, p, h)?;
                h = tape.add(h, f)?;
            }
            tape.mean_rows(h)
        };
        let out = self.head.forward(tape, p, pooled)?;
        let l = self.config.latent_dim;
        let mean = tape.slice_cols(out, 0, l)?;
        let raw = tape.slice_cols(out, l, l)?;
        let std = gaussian::positive_on_tape(tape, raw, 1.0);
        Ok(TapedLatent { mean, std })
    }

    /// Outcome mean and std (`m×3` each) for a `1×latent` z and `m` actions.
    pub fn decode_on_tape(&self, tape: &mut Tape, p: &Bound, z: Var, actions: &[[f64; 3]]) -> Result<(Var, Var), PnpError> {
        let m = actions.len();
        let mut rows = Vec::with_capacity(m * ACTION_DIM);
        for a in actions {
            self.action_row(*a, &mut rows);
        }
        let act = tape.constant(Tensor::new(m, ACTION_DIM, rows));
        let zb = tape.broadcast_rows(z, m)?;
        let input = tape.concat_cols(&[zb, act])?;
        let out = self.decoder.forward(tape, p, input)?;
        let scale = tape.constant(Tensor::from_fn(m, 3, |_, c| OUTCOME_SCALE[c]));
        let raw_mean = tape.slice_cols(out, 0, 3)?;
        let mean = tape.mul(raw_mean, scale)?;
        let raw_std = tape.slice_cols(out, 3, 3)?;
        let sp = tape.softplus(raw_std);
        let sp = tape.mul(sp, scale)?;
        let std = tape.add_scalar(sp, STD_FLOOR);
        Ok((mean, std))
    }

    /// Negative ELBO with the latent drawn as `mean + std ⊙ eps` from the target posterior.
    pub fn elbo_on_tape(
        &self,
        tape: &mut Tape,
        p: &Bound,
        context: &[PushRecord],
        targets: &[PushRecord],
        eps: &[f64],
    ) -> Result<Var, PnpError> {
        if targets.is_empty() {
            return Err(PnpError::EmptyTargets);
        }
        let full = self.encode_on_tape(tape, p, targets)?;
        let ctx = self.encode_on_tape(tape, p, context)?;
        let z = gaussian::reparam_on_tape(tape, full.mean, full.std, Tensor::row(eps))?;
        let actions: Vec<[f64; 3]> = targets.iter().map(|r| r.action).collect();
        let (mean, std) = self.decode_on_tape(tape, p, z, &actions)?;
        let obs = Tensor::from_fn(targets.len(), 3, |r, c| targets[r].outcome[c]);
        let obs = tape.constant(obs);
        let ll = gaussian::logpdf_on_tape(tape, mean, std, obs)?;
        let kl = gaussian::kl_on_tape(tape, full.mean, full.std, ctx.mean, ctx.std)?;
        Ok(tape.sub(kl, ll)?)
    }

    /// Negative ELBO for one (context, targets) split, drawing the latent noise from `rng`.
    pub fn elbo_loss<R: Rng + ?Sized>(&self, context: &[PushRecord], targets: &[PushRecord], rng: &mut R) -> Result<f64, PnpError> {
        let eps = self.draw_eps(rng);
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let loss = self.elbo_on_tape(&mut tape, &p, context, targets, &eps)?;
        Ok(tape.value(loss).item())
    }

    pub(crate) fn draw_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.latent_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Posterior over the latent given a push history, evaluated without a tape.
    pub fn encode(&self, records: &[PushRecord]) -> GaussianDiag {
        let pooled = if records.is_empty() {
            self.params.get(self.default_token).clone()
        } else {
            let mut h = self.embed.apply(&self.params, &self.tokens(records));
            for block in &self.blocks {
                let a = self_attention(&block.attention, &self.params, &h);
                h.add_assign(&a);
                let f = block.feed_forward.apply(&self.params, &h);
                h.add_assign(&f);
            }
            let n = h.rows() as f64;
            Tensor::from_fn(1, h.cols(), |_, c| (0..h.rows()).map(|r| h.get(r, c)).sum::<f64>() / n)
        };
        let out = self.head.apply(&self.params, &pooled);
        let l = self.config.latent_dim;
        let d = out.data();
        GaussianDiag::new(d[..l].to_vec(), d[l..2 * l].iter().map(|&r| softplus(r) + STD_FLOOR).collect())
    }

    /// Outcome distribution for one latent and one action.
    pub fn decode(&self, z: &[f64], action: [f64; 3]) -> GaussianDiag {
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        self.decode_into(z, action, &mut DecodeScratch::default(), &mut mean, &mut std);
        GaussianDiag::new(mean.to_vec(), std.to_vec())
    }

    /// Allocation-light decoder used inside the planner.
    pub fn decode_into(&self, z: &[f64], action: [f64; 3], scratch: &mut DecodeScratch, mean: &mut [f64; 3], std: &mut [f64; 3]) {
        assert_eq!(z.len(), self.config.latent_dim, "latent width");
        let DecodeScratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(z);
        self.action_row(action, a);
        let last = self.decoder.layers.len() - 1;
        for (i, layer) in self.decoder.layers.iter().enumerate() {
            let w = self.params.get(layer.w);
            let bias = self.params.get(layer.b).data();
            b.clear();
            b.extend_from_slice(bias);
            row_times_matrix(a, w.data(), b);
            if i < last {
                let act = self.decoder.activation;
                for v in b.iter_mut() {
                    *v = act.eval(*v);
                }
            }
            std::mem::swap(a, b);
        }
        for c in 0..3 {
            mean[c] = a[c] * OUTCOME_SCALE[c];
            std[c] = softplus(a[3 + c]) * OUTCOME_SCALE[c] + STD_FLOOR;
        }
    }

    /// Draws `z` from the posterior and an outcome from the decoder.
    pub fn predict<R: Rng + ?Sized>(&self, records: &[PushRecord], action: [f64; 3], rng: &mut R) -> [f64; 3] {
        let q = self.encode(records);
        let z = q.sample(rng);
        let o = self.decode(&z, action).sample(rng);
        [o[0], o[1], o[2]]
    }

    /// Deterministic prediction through both means.
    pub fn predict_mean(&self, records: &[PushRecord], action: [f64; 3]) -> [f64; 3] {
        let q = self.encode(records);
        let o = self.decode(&q.mean, action);
        [o.mean[0], o.mean[1], o.mean[2]]
    }
}

fn self_attention(att: &MultiHeadAttention, params: &ParamSet, h: &Tensor) -> Tensor {
    // fused version of MultiHeadAttention::apply for queries == keys
    if h.rows() == 1 {
        // a single token attends only to itself with weight one
        return att.wo.apply(params, &att.wv.apply(params, h));
    }
    let q = att.wq.apply(params, h);
    let k = att.wk.apply(params, h);
    let v = att.wv.apply(params, h);
    let dk = att.dim / att.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let n = h.rows();
    let mut cat = Tensor::zeros(n, att.dim);
    let mut s = Tensor::zeros(n, n);
    for head in 0..att.heads {
        let cols = head * dk..(head + 1) * dk;
        for i in 0..n {
            let qi = &q.row_slice(i)[cols.clone()];
            for j in 0..n {
                let kj = &k.row_slice(j)[cols.clone()];
                s.set(i, j, qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale);
            }
        }
        softmax_rows_in_place(&mut s);
        for i in 0..n {
            for j in 0..n {
                let w = s.get(i, j);
                let vj = &v.row_slice(j)[cols.clone()];
                let row = &mut cat.data_mut()[i * att.dim + head * dk..i * att.dim + (head + 1) * dk];
                for (o, vv) in row.iter_mut().zip(vj) {
                    *o += w * vv;
                }
            }
        }
    }
    att.wo.apply(params, &cat)
}

/// Reusable buffers for [`PnpModel::decode_into`].
#[derive(Debug, Default, Clone)]
pub struct DecodeScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}
