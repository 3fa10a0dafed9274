//! Graph neural scheduler: learns per-user scheduling indicators and uplink
//! powers directly from channel features.
//!
//! The network runs a fixed number of rounds over the complete directed user
//! graph. Each round sends a learned message along every edge (inputs: the
//! source node's current state, its node feature, and the edge feature),
//! aggregates incoming messages per node with an elementwise `[max; mean]`
//! pool, and updates the node state with a second learned stack. Node states
//! start at zero and carry `(kappa, q)` — a scheduling indicator and an
//! uplink power. In strict mode the update stack's third output is dropped;
//! otherwise it rides along as an auxiliary scalar that the next round's
//! inputs include.
//!
//! The raw head outputs pass through a projection ([`pac_project`]) onto the
//! feasible box-and-simplex set (`kappa` in `[0, 1]`, `q >= 0`, total uplink
//! power within the budget), and training minimizes a per-node-averaged
//! penalized objective ([`lagrangian_loss`]) whose multipliers grow over
//! epochs. Every piece has an exact reverse-mode derivative; the SINR term
//! differentiates through the rank-1 inverse-update chain analytically, with
//! a finite-difference fallback ([`SinrGradPath`]).

pub mod graph;
pub mod mlp;

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::duality::rescale_into_budget;
use crate::rates::{
    mmse_uplink_sinr, mmse_uplink_sinr_jacobian_fd, mmse_uplink_sinr_with_jacobian,
};
use crate::system::ChannelSample;
use crate::{Error, Result};

pub use graph::{build_graph, GraphInstance};
pub use mlp::{Batch, ForwardMode, Mlp, MlpGrads, MlpTape};

/// Message embedding width `m` of the published architecture.
pub const DEFAULT_EMBEDDING_DIM: usize = 16;
/// Rounds of message passing.
pub const DEFAULT_LAYER_COUNT: usize = 2;
/// Hidden widths shared by the message and update stacks.
pub const DEFAULT_HIDDEN: [usize; 5] = [256, 128, 64, 32, 16];

const CHECKPOINT_MAGIC: &str = "usbf-model";
const CHECKPOINT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Per-round weights of the graph network.
#[derive(Clone, Debug)]
pub struct JeeponModel {
    /// Message embedding width.
    pub m: usize,
    /// Number of message-passing rounds.
    pub n_layers: usize,
    /// Strict mode drops the update stack's third output; otherwise it is an
    /// auxiliary node scalar fed to the next round.
    pub strict: bool,
    pub message: Vec<Mlp>,
    pub update: Vec<Mlp>,
}

impl JeeponModel {
    /// Published architecture: `m = 16`, two rounds, strict mode.
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_dims(DEFAULT_EMBEDDING_DIM, DEFAULT_LAYER_COUNT, true, seed)
    }

    pub fn with_dims(m: usize, n_layers: usize, strict: bool, seed: u64) -> Result<Self> {
        Self::with_hidden(m, n_layers, strict, &DEFAULT_HIDDEN, &DEFAULT_HIDDEN, seed)
    }

    /// Fully parameterized constructor; `message_hidden` / `update_hidden`
    /// are the interior widths only (input and output dims are implied by
    /// `m` and `strict`). Weights are drawn uniformly in `±1/sqrt(fan_in)`
    /// from a seeded generator, stack by stack in parameter order.
    pub fn with_hidden(
        m: usize,
        n_layers: usize,
        strict: bool,
        message_hidden: &[usize],
        update_hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if m == 0 || n_layers == 0 {
            return Err(Error::InvalidArgument(
                "embedding width and round count must be at least 1".into(),
            ));
        }
        let mut msg_chain = vec![if strict { 4 } else { 5 }];
        msg_chain.extend_from_slice(message_hidden);
        msg_chain.push(m);
        let mut upd_chain = vec![(if strict { 3 } else { 4 }) + 2 * m];
        upd_chain.extend_from_slice(update_hidden);
        upd_chain.push(3);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let message = (0..n_layers)
            .map(|_| Mlp::new(&msg_chain, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let update = (0..n_layers)
            .map(|_| Mlp::new(&upd_chain, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { m, n_layers, strict, message, update })
    }

    #[inline]
    fn message_in_dim(&self) -> usize {
        if self.strict {
            4
        } else {
            5
        }
    }

    #[inline]
    fn update_in_dim(&self) -> usize {
        (if self.strict { 3 } else { 4 }) + 2 * self.m
    }

    pub fn param_count(&self) -> usize {
        self.message.iter().chain(&self.update).map(|s| s.param_count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.message.iter().chain(&self.update) {
            s.append_params(&mut out);
        }
        out
    }

    pub fn apply_step(&mut self, step: &[f64]) -> Result<()> {
        if step.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter step length",
                expected: self.param_count(),
                found: step.len(),
            });
        }
        let mut rest = step;
        for s in self.message.iter_mut().chain(self.update.iter_mut()) {
            rest = s.apply_step(rest);
        }
        Ok(())
    }

    pub fn zero_params(&mut self) {
        for s in self.message.iter_mut().chain(self.update.iter_mut()) {
            s.zero_params();
        }
    }

    /// One full pass of message passing; returns the raw per-node heads
    /// `(kappa_raw, q_raw)` before projection, plus the tape for backward.
    pub fn gcn_forward(
        &self,
        g: &GraphInstance,
        mode: ForwardMode,
    ) -> Result<(Vec<f64>, Vec<f64>, JeeponTape)> {
        let k = g.n;
        if k == 0 || g.x.len() != k || g.e.len() != k * k {
            return Err(Error::InvalidArgument("malformed graph instance".into()));
        }
        let m = self.m;
        let deg = k.saturating_sub(1);

        let mut beta = Batch::zeros(k, 2);
        let mut aux = vec![0.0; k];
        let mut layers = Vec::with_capacity(self.n_layers);
        for l in 0..self.n_layers {
            // Messages along every directed edge, grouped by target node.
            let mut agg = Batch::zeros(k, 2 * m);
            let mut argmax_rows = vec![0usize; if deg > 0 { k * m } else { 0 }];
            let mut message_tape = None;
            if deg > 0 {
                let mut msg_in = Batch::zeros(k * deg, self.message_in_dim());
                for v in 0..k {
                    for (slot, u) in (0..k).filter(|&u| u != v).enumerate() {
                        let row = msg_in.row_mut(v * deg + slot);
                        row[0] = beta.row(u)[0];
                        row[1] = beta.row(u)[1];
                        let mut idx = 2;
                        if !self.strict {
                            row[idx] = aux[u];
                            idx += 1;
                        }
                        row[idx] = g.x[u];
                        row[idx + 1] = g.edge(u, v);
                    }
                }
                let (messages, mtape) = self.message[l].forward(&msg_in, mode)?;
                for v in 0..k {
                    let base = v * deg;
                    let arow = agg.row_mut(v);
                    for j in 0..m {
                        let mut best_row = base;
                        let mut best = messages.row(base)[j];
                        let mut sum = 0.0;
                        for r in base..base + deg {
                            let val = messages.row(r)[j];
                            sum += val;
                            if val > best {
                                best = val;
                                best_row = r;
                            }
                        }
                        arow[j] = best;
                        arow[m + j] = sum / deg as f64;
                        argmax_rows[v * m + j] = best_row;
                    }
                }
                message_tape = Some(mtape);
            }

            // Node update from own state, node feature, and the pooled
            // messages (zeros on a single-node graph).
            let mut upd_in = Batch::zeros(k, self.update_in_dim());
            for v in 0..k {
                let row = upd_in.row_mut(v);
                row[0] = beta.row(v)[0];
                row[1] = beta.row(v)[1];
                let mut idx = 2;
                if !self.strict {
                    row[idx] = aux[v];
                    idx += 1;
                }
                row[idx] = g.x[v];
                row[idx + 1..idx + 1 + 2 * m].copy_from_slice(agg.row(v));
            }
            let (out, update_tape) = self.update[l].forward(&upd_in, mode)?;
            for v in 0..k {
                beta.row_mut(v)[0] = out.row(v)[0];
                beta.row_mut(v)[1] = out.row(v)[1];
                if !self.strict {
                    aux[v] = out.row(v)[2];
                }
            }
            layers.push(GcnLayerTape { message_tape, argmax_rows, update_tape });
        }

        let kappa_raw: Vec<f64> = (0..k).map(|v| beta.row(v)[0]).collect();
        let q_raw: Vec<f64> = (0..k).map(|v| beta.row(v)[1]).collect();
        Ok((kappa_raw, q_raw, JeeponTape { mode, n: k, layers }))
    }

    /// Reverse pass from head gradients to a flat parameter gradient in
    /// [`JeeponModel::params`] order (message stacks, then update stacks).
    pub fn gcn_backward(
        &self,
        tape: &JeeponTape,
        d_kappa_raw: &[f64],
        d_q_raw: &[f64],
    ) -> Result<Vec<f64>> {
        let k = tape.n;
        if d_kappa_raw.len() != k || d_q_raw.len() != k {
            return Err(Error::DimensionMismatch {
                context: "head gradient length",
                expected: k,
                found: d_kappa_raw.len().min(d_q_raw.len()),
            });
        }
        if tape.layers.len() != self.n_layers {
            return Err(Error::InvalidArgument("stale tape for this model".into()));
        }
        let m = self.m;
        let deg = k - 1;
        let mut msg_grads: Vec<MlpGrads> =
            self.message.iter().map(|s| s.grads_zeroed()).collect();
        let mut upd_grads: Vec<MlpGrads> =
            self.update.iter().map(|s| s.grads_zeroed()).collect();

        let mut d_beta = Batch::zeros(k, 2);
        for v in 0..k {
            d_beta.row_mut(v)[0] = d_kappa_raw[v];
            d_beta.row_mut(v)[1] = d_q_raw[v];
        }
        // Gradient on the auxiliary scalar after the final round (unused by
        // the heads, so zero).
        let mut d_aux = vec![0.0; k];

        for l in (0..self.n_layers).rev() {
            let lt = &tape.layers[l];
            let mut d_out = Batch::zeros(k, 3);
            for v in 0..k {
                d_out.row_mut(v)[0] = d_beta.row(v)[0];
                d_out.row_mut(v)[1] = d_beta.row(v)[1];
                if !self.strict {
                    d_out.row_mut(v)[2] = d_aux[v];
                }
            }
            let d_upd_in = self.update[l].backward(&lt.update_tape, &d_out, &mut upd_grads[l])?;

            let mut d_beta_prev = Batch::zeros(k, 2);
            let mut d_aux_prev = vec![0.0; k];
            let mut d_agg = Batch::zeros(k, 2 * m);
            for v in 0..k {
                let row = d_upd_in.row(v);
                d_beta_prev.row_mut(v)[0] = row[0];
                d_beta_prev.row_mut(v)[1] = row[1];
                let mut idx = 2;
                if !self.strict {
                    d_aux_prev[v] = row[idx];
                    idx += 1;
                }
                // row[idx] is the node feature: data, not a parameter path.
                d_agg.row_mut(v).copy_from_slice(&row[idx + 1..idx + 1 + 2 * m]);
            }

            if deg > 0 {
                // Pool backward: max routes to the recorded argmax row, mean
                // spreads uniformly over the incoming block.
                let mut d_msg = Batch::zeros(k * deg, m);
                for v in 0..k {
                    let darow = d_agg.row(v);
                    for j in 0..m {
                        d_msg.row_mut(lt.argmax_rows[v * m + j])[j] += darow[j];
                        let mean_grad = darow[m + j] / deg as f64;
                        for r in v * deg..(v + 1) * deg {
                            d_msg.row_mut(r)[j] += mean_grad;
                        }
                    }
                }
                let mtape = lt.message_tape.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("tape lacks a message record".into())
                })?;
                let d_msg_in = self.message[l].backward(mtape, &d_msg, &mut msg_grads[l])?;
                for r in 0..k * deg {
                    let u = edge_source(r, k);
                    let row = d_msg_in.row(r);
                    d_beta_prev.row_mut(u)[0] += row[0];
                    d_beta_prev.row_mut(u)[1] += row[1];
                    if !self.strict {
                        d_aux_prev[u] += row[2];
                    }
                }
            }
            d_beta = d_beta_prev;
            d_aux = d_aux_prev;
        }
        // The initial node state is the zero constant; its gradient is dropped.

        let mut flat = Vec::with_capacity(self.param_count());
        for g in msg_grads.iter().chain(&upd_grads) {
            g.flatten_into(&mut flat);
        }
        Ok(flat)
    }

    /// Folds the tape's batch statistics into every stack's running averages.
    pub fn absorb_batch_stats(&mut self, tape: &JeeponTape) {
        for (l, lt) in tape.layers.iter().enumerate().take(self.n_layers) {
            if let Some(mt) = &lt.message_tape {
                self.message[l].absorb(mt);
            }
            self.update[l].absorb(&lt.update_tape);
        }
    }

    fn stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.message.iter().chain(&self.update) {
            s.append_stats(&mut out);
        }
        out
    }
}

/// Source node of directed-edge row `row` when edges are grouped by target.
#[inline]
fn edge_source(row: usize, k: usize) -> usize {
    let v = row / (k - 1);
    let j = row % (k - 1);
    if j < v {
        j
    } else {
        j + 1
    }
}

struct GcnLayerTape {
    message_tape: Option<MlpTape>,
    argmax_rows: Vec<usize>,
    update_tape: MlpTape,
}

/// Forward record of [`JeeponModel::gcn_forward`].
pub struct JeeponTape {
    pub mode: ForwardMode,
    n: usize,
    layers: Vec<GcnLayerTape>,
}

impl JeeponTape {
    pub fn n_users(&self) -> usize {
        self.n
    }
}

// ---------------------------------------------------------------------------
// Projection onto the feasible set
// ---------------------------------------------------------------------------

/// Record of the projection's active branches, for its backward pass.
#[derive(Clone, Debug)]
pub struct PacTape {
    kappa_interior: Vec<bool>,
    q_interior: Vec<bool>,
    /// Clamped powers before the budget rescale.
    q_clamped: Vec<f64>,
    sum_before: f64,
    scale: f64,
}

impl PacTape {
    /// Cumulative rescale factor applied to the clamped powers (1.0 when the
    /// budget was already respected).
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Projects raw heads onto the feasible set: `kappa` clamps to `[0, 1]`,
/// powers clamp to `[0, p_budget]` and are then scaled down together if their
/// sum still exceeds the budget. Exactly idempotent.
pub fn pac_project(kappa_raw: &[f64], q_raw: &[f64], p_budget: f64) -> (Vec<f64>, Vec<f64>) {
    let (kappa, q, _) = pac_project_traced(kappa_raw, q_raw, p_budget);
    (kappa, q)
}

pub fn pac_project_traced(
    kappa_raw: &[f64],
    q_raw: &[f64],
    p_budget: f64,
) -> (Vec<f64>, Vec<f64>, PacTape) {
    assert_eq!(kappa_raw.len(), q_raw.len());
    assert!(p_budget > 0.0, "power budget must be positive");
    let kappa: Vec<f64> = kappa_raw.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    let kappa_interior: Vec<bool> = kappa_raw.iter().map(|&x| x > 0.0 && x < 1.0).collect();
    let q_clamped: Vec<f64> = q_raw.iter().map(|&x| x.clamp(0.0, p_budget)).collect();
    let q_interior: Vec<bool> = q_raw.iter().map(|&x| x > 0.0 && x < p_budget).collect();
    let sum_before: f64 = q_clamped.iter().sum();
    let mut q = q_clamped.clone();
    let scale = rescale_into_budget(&mut q, p_budget);
    (kappa, q, PacTape { kappa_interior, q_interior, q_clamped, sum_before, scale })
}

/// Backward through the projection. Clamps pass gradients only strictly
/// inside their interval (the subgradient at a boundary is taken as 0); the
/// rescale branch applies its exact Jacobian
/// `d q_k / d q'_j = scale * delta_kj - (scale / sum) * q'_k`.
pub fn pac_backward(tape: &PacTape, d_kappa: &[f64], d_q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(d_kappa.len(), tape.kappa_interior.len());
    assert_eq!(d_q.len(), tape.q_interior.len());
    let d_kappa_raw: Vec<f64> = d_kappa
        .iter()
        .zip(&tape.kappa_interior)
        .map(|(&d, &inside)| if inside { d } else { 0.0 })
        .collect();

    let d_q_clamped: Vec<f64> = if tape.scale != 1.0 {
        let dot: f64 = d_q.iter().zip(&tape.q_clamped).map(|(d, q)| d * q).sum();
        let correction = tape.scale / tape.sum_before * dot;
        d_q.iter().map(|&d| tape.scale * d - correction).collect()
    } else {
        d_q.to_vec()
    };
    let d_q_raw: Vec<f64> = d_q_clamped
        .iter()
        .zip(&tape.q_interior)
        .map(|(&d, &inside)| if inside { d } else { 0.0 })
        .collect();
    (d_kappa_raw, d_q_raw)
}

// ---------------------------------------------------------------------------
// Penalized training objective
// ---------------------------------------------------------------------------

/// Multipliers of the penalized objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LagrangeState {
    pub mu: f64,
    pub nu: f64,
}

/// Loss value with its additive pieces, averaged over nodes:
/// `loss = (-sum kappa + mu * binary_violation + nu * sinr_violation) / K`.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub kappa_sum: f64,
    /// `sum_k max(kappa_k - kappa_k^2, 0)` — distance from binary values.
    pub binary_violation: f64,
    /// `sum_k max(kappa_k * gamma_tilde_k - gamma_hat_k, 0)` — unmet SINR.
    pub sinr_violation: f64,
}

fn breakdown_from(
    kappa: &[f64],
    gamma_hat: &[f64],
    gamma_tilde: &[f64],
    lag: LagrangeState,
) -> LossBreakdown {
    let kappa_sum: f64 = kappa.iter().sum();
    let binary_violation: f64 = kappa.iter().map(|&x| (x - x * x).max(0.0)).sum();
    let sinr_violation: f64 = kappa
        .iter()
        .zip(gamma_hat)
        .zip(gamma_tilde)
        .map(|((&x, &gh), &gt)| (x * gt - gh).max(0.0))
        .sum();
    let loss = (-kappa_sum + lag.mu * binary_violation + lag.nu * sinr_violation)
        / kappa.len() as f64;
    LossBreakdown { loss, kappa_sum, binary_violation, sinr_violation }
}

fn check_loss_inputs(
    sample: &ChannelSample,
    kappa: &[f64],
    q: &[f64],
    gamma_tilde: &[f64],
    lag: LagrangeState,
) -> Result<()> {
    let k = sample.n_users();
    if kappa.len() != k || q.len() != k || gamma_tilde.len() != k {
        return Err(Error::DimensionMismatch {
            context: "loss per-user inputs",
            expected: k,
            found: kappa.len().min(q.len()).min(gamma_tilde.len()),
        });
    }
    if !(lag.mu >= 0.0 && lag.nu >= 0.0 && lag.mu.is_finite() && lag.nu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "multipliers must be finite and nonnegative, got mu = {}, nu = {}",
            lag.mu, lag.nu
        )));
    }
    Ok(())
}

/// Penalized objective at projected outputs `(kappa, q)`. The SINR each user
/// would get is the substituted uplink SINR at `q`; scheduling targets are
/// scaled by `kappa`, so descheduled users (kappa = 0) impose nothing.
pub fn lagrangian_loss(
    sample: &ChannelSample,
    kappa: &[f64],
    q: &[f64],
    gamma_tilde: &[f64],
    lag: LagrangeState,
) -> Result<LossBreakdown> {
    check_loss_inputs(sample, kappa, q, gamma_tilde, lag)?;
    let gamma_hat = mmse_uplink_sinr(sample, q)?;
    Ok(breakdown_from(kappa, &gamma_hat, gamma_tilde, lag))
}

/// How the SINR term's power derivative is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SinrGradPath {
    /// Exact derivative through the rank-1 inverse-update chain.
    #[default]
    Analytic,
    /// Central finite differences (runtime fallback; ~2K times slower).
    FiniteDifference,
}

/// Loss and its gradients with respect to the projected heads. Hinge terms
/// use subgradient 0 exactly at their kink.
pub fn head_gradients(
    sample: &ChannelSample,
    kappa: &[f64],
    q: &[f64],
    gamma_tilde: &[f64],
    lag: LagrangeState,
    path: SinrGradPath,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    check_loss_inputs(sample, kappa, q, gamma_tilde, lag)?;
    let (gamma_hat, jac) = match path {
        SinrGradPath::Analytic => mmse_uplink_sinr_with_jacobian(sample, q)?,
        SinrGradPath::FiniteDifference => {
            (mmse_uplink_sinr(sample, q)?, mmse_uplink_sinr_jacobian_fd(sample, q)?)
        }
    };
    let breakdown = breakdown_from(kappa, &gamma_hat, gamma_tilde, lag);

    let n = kappa.len();
    let nf = n as f64;
    let mut d_kappa = Vec::with_capacity(n);
    for k in 0..n {
        let mut g = -1.0;
        if kappa[k] - kappa[k] * kappa[k] > 0.0 {
            g += lag.mu * (1.0 - 2.0 * kappa[k]);
        }
        if kappa[k] * gamma_tilde[k] - gamma_hat[k] > 0.0 {
            g += lag.nu * gamma_tilde[k];
        }
        d_kappa.push(g / nf);
    }
    let mut d_q = vec![0.0; n];
    for k in 0..n {
        if kappa[k] * gamma_tilde[k] - gamma_hat[k] > 0.0 {
            for m in 0..n {
                d_q[m] -= lag.nu * jac[k][m] / nf;
            }
        }
    }
    Ok((breakdown, d_kappa, d_q))
}

// ---------------------------------------------------------------------------
// Shared policy interface and checkpoints
// ---------------------------------------------------------------------------

/// Training-state annotations stored alongside the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainAnnotations {
    pub step_count: u64,
    pub mu: f64,
    pub nu: f64,
    pub eps_mu: f64,
    pub eps_nu: f64,
}

/// Serialized model: identification header plus flat weights and running
/// normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub m: usize,
    pub n_layers: usize,
    pub strict: bool,
    pub chains: Vec<Vec<usize>>,
    pub train: TrainAnnotations,
    pub params: Vec<f64>,
    pub stats: Vec<f64>,
}

/// A trainable scheduling policy: graph in, raw `(kappa, q)` heads out, with
/// exact parameter gradients. Implemented by the graph network and by the
/// convolutional baseline so the trainer and harness are shared.
pub trait PolicyNet: Sized + Clone + Send + Sync {
    type Tape;
    const KIND: &'static str;

    fn forward(
        &self,
        graph: &GraphInstance,
        mode: ForwardMode,
    ) -> Result<(Vec<f64>, Vec<f64>, Self::Tape)>;

    /// Flat parameter gradient (same order as [`PolicyNet::apply_step`])
    /// from gradients on the raw heads.
    fn backward(
        &self,
        tape: &Self::Tape,
        d_kappa_raw: &[f64],
        d_q_raw: &[f64],
    ) -> Result<Vec<f64>>;

    fn absorb_batch_stats(&mut self, tape: &Self::Tape);
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn apply_step(&mut self, step: &[f64]) -> Result<()>;
    fn to_checkpoint(&self, train: TrainAnnotations) -> Checkpoint;
    fn from_checkpoint(cp: &Checkpoint) -> Result<Self>;
}

impl PolicyNet for JeeponModel {
    type Tape = JeeponTape;
    const KIND: &'static str = "jeepon";

    fn forward(
        &self,
        graph: &GraphInstance,
        mode: ForwardMode,
    ) -> Result<(Vec<f64>, Vec<f64>, JeeponTape)> {
        self.gcn_forward(graph, mode)
    }

    fn backward(
        &self,
        tape: &JeeponTape,
        d_kappa_raw: &[f64],
        d_q_raw: &[f64],
    ) -> Result<Vec<f64>> {
        self.gcn_backward(tape, d_kappa_raw, d_q_raw)
    }

    fn absorb_batch_stats(&mut self, tape: &JeeponTape) {
        JeeponModel::absorb_batch_stats(self, tape)
    }

    fn param_count(&self) -> usize {
        JeeponModel::param_count(self)
    }

    fn params(&self) -> Vec<f64> {
        JeeponModel::params(self)
    }

    fn apply_step(&mut self, step: &[f64]) -> Result<()> {
        JeeponModel::apply_step(self, step)
    }

    fn to_checkpoint(&self, train: TrainAnnotations) -> Checkpoint {
        Checkpoint {
            kind: Self::KIND.to_string(),
            m: self.m,
            n_layers: self.n_layers,
            strict: self.strict,
            chains: self
                .message
                .iter()
                .chain(&self.update)
                .map(|s| s.chain())
                .collect(),
            train,
            params: self.params(),
            stats: self.stats(),
        }
    }

    fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.kind != Self::KIND {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds a `{}` model, expected `{}`",
                cp.kind,
                Self::KIND
            )));
        }
        if cp.n_layers == 0 || cp.chains.len() != 2 * cp.n_layers {
            return Err(Error::Format(format!(
                "expected {} chains for {} rounds, found {}",
                2 * cp.n_layers,
                cp.n_layers,
                cp.chains.len()
            )));
        }
        let mut model = Self {
            m: cp.m,
            n_layers: cp.n_layers,
            strict: cp.strict,
            message: Vec::new(),
            update: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, chain) in cp.chains.iter().enumerate() {
            let stack = Mlp::new(chain, &mut rng)?;
            let (expect_in, expect_out) = if i < cp.n_layers {
                (model.message_in_dim(), cp.m)
            } else {
                (model.update_in_dim(), 3)
            };
            if stack.in_dim() != expect_in || stack.out_dim() != expect_out {
                return Err(Error::Format(format!(
                    "chain {i} is {}->{}, expected {expect_in}->{expect_out}",
                    stack.in_dim(),
                    stack.out_dim()
                )));
            }
            if i < cp.n_layers {
                model.message.push(stack);
            } else {
                model.update.push(stack);
            }
        }
        let mut rest: &[f64] = &cp.params;
        for s in model.message.iter_mut().chain(model.update.iter_mut()) {
            rest = s.read_params(rest)?;
        }
        if !rest.is_empty() {
            return Err(Error::Format("parameter payload has trailing values".into()));
        }
        let mut rest: &[f64] = &cp.stats;
        for s in model.message.iter_mut().chain(model.update.iter_mut()) {
            rest = s.read_stats(rest)?;
        }
        if !rest.is_empty() {
            return Err(Error::Format("statistics payload has trailing values".into()));
        }
        Ok(model)
    }
}

/// Writes a checkpoint: a plain-text header (ending in `end`) followed by a
/// little-endian `f64` payload of the parameters and running statistics.
pub fn write_checkpoint(path: impl AsRef<Path>, cp: &Checkpoint) -> Result<()> {
    let mut header = String::new();
    header.push_str(&format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n"));
    header.push_str(&format!("kind = {}\n", cp.kind));
    header.push_str(&format!("m = {}\n", cp.m));
    header.push_str(&format!("layers = {}\n", cp.n_layers));
    header.push_str(&format!("strict = {}\n", u8::from(cp.strict)));
    header.push_str(&format!("chains = {}\n", cp.chains.len()));
    for chain in &cp.chains {
        let dims: Vec<String> = chain.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("chain = {}\n", dims.join(",")));
    }
    header.push_str(&format!("step_count = {}\n", cp.train.step_count));
    header.push_str(&format!("mu = {}\n", cp.train.mu));
    header.push_str(&format!("nu = {}\n", cp.train.nu));
    header.push_str(&format!("eps_mu = {}\n", cp.train.eps_mu));
    header.push_str(&format!("eps_nu = {}\n", cp.train.eps_nu));
    header.push_str(&format!("params = {}\n", cp.params.len()));
    header.push_str(&format!("stats = {}\n", cp.stats.len()));
    header.push_str("end\n");

    let mut payload = Vec::with_capacity((cp.params.len() + cp.stats.len()) * 8);
    for &x in cp.params.iter().chain(&cp.stats) {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`], bit-exactly.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut offset = 0usize;
    let mut lines: Vec<String> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::Format("checkpoint header is missing its `end` marker".into())
        })?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("checkpoint header is not valid UTF-8".into()))?
            .to_string();
        offset += nl + 1;
        if line.trim() == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(Error::Format("checkpoint header is empty".into()));
    }
    let mut parts = lines[0].split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Format(format!("not a model checkpoint: `{}`", lines[0])));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("checkpoint header has no version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }

    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad checkpoint value `{value}` for `{key}`")))
    }
    let mut kind = None;
    let mut m = None;
    let mut n_layers = None;
    let mut strict = None;
    let mut chain_count = None;
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut train = TrainAnnotations::default();
    let mut n_params = None;
    let mut n_stats = None;
    for line in &lines[1..] {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed checkpoint line `{line}`")))?;
        let key = key.trim();
        match key {
            "kind" => kind = Some(value.trim().to_string()),
            "m" => m = Some(parse(key, value)?),
            "layers" => n_layers = Some(parse(key, value)?),
            "strict" => strict = Some(parse::<u8>(key, value)? != 0),
            "chains" => chain_count = Some(parse::<usize>(key, value)?),
            "chain" => chains.push(
                value
                    .trim()
                    .split(',')
                    .map(|d| parse::<usize>("chain", d))
                    .collect::<Result<Vec<usize>>>()?,
            ),
            "step_count" => train.step_count = parse(key, value)?,
            "mu" => train.mu = parse(key, value)?,
            "nu" => train.nu = parse(key, value)?,
            "eps_mu" => train.eps_mu = parse(key, value)?,
            "eps_nu" => train.eps_nu = parse(key, value)?,
            "params" => n_params = Some(parse::<usize>(key, value)?),
            "stats" => n_stats = Some(parse::<usize>(key, value)?),
            other => {
                return Err(Error::Format(format!("unknown checkpoint key `{other}`")))
            }
        }
    }
    let missing = |what: &str| Error::Format(format!("checkpoint header lacks `{what}`"));
    let kind = kind.ok_or_else(|| missing("kind"))?;
    let m = m.ok_or_else(|| missing("m"))?;
    let n_layers = n_layers.ok_or_else(|| missing("layers"))?;
    let strict = strict.ok_or_else(|| missing("strict"))?;
    let n_params = n_params.ok_or_else(|| missing("params"))?;
    let n_stats = n_stats.ok_or_else(|| missing("stats"))?;
    if chain_count != Some(chains.len()) {
        return Err(Error::Format(format!(
            "checkpoint declares {chain_count:?} chains but lists {}",
            chains.len()
        )));
    }

    let payload = &bytes[offset..];
    if payload.len() != (n_params + n_stats) * 8 {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, expected {}",
            payload.len(),
            (n_params + n_stats) * 8
        )));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params: Vec<f64> = floats.by_ref().take(n_params).collect();
    let stats: Vec<f64> = floats.collect();
    Ok(Checkpoint { kind, m, n_layers, strict, chains, train, params, stats })
}

// ---------------------------------------------------------------------------
