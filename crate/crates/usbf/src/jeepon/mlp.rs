//! Batched multi-layer perceptrons with exact reverse-mode gradients.
//!
//! Hidden layers are affine → batch normalization → leaky rectifier (slope
//! 0.01). The output layer applies only a per-channel scale and shift to its
//! affine values — normalizing the heads would pin their per-batch mean and
//! spread, leaving the network unable to move all outputs together (raising
//! every power head to spend more of the budget, say). Normalization
//! statistics are computed over the batch dimension in training mode and
//! read from running averages at inference; a forward pass never mutates the
//! model — running averages move only when [`Mlp::absorb`] is called with
//! the pass's tape.

use rand::Rng;

use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LRELU_SLOPE: f64 = 0.01;

/// Whether a forward pass normalizes with batch statistics (training) or
/// with stored running averages (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Infer,
}

/// Dense row-major batch of feature vectors.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// One affine + normalization + activation block.
#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Normalization scale and shift.
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl MlpLayer {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            gamma: vec![1.0; out_dim],
            beta: vec![0.0; out_dim],
            running_mean: vec![0.0; out_dim],
            running_var: vec![1.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + self.gamma.len() + self.beta.len()
    }
}

/// Per-layer forward record: everything backward needs.
#[derive(Clone, Debug)]
pub struct LayerTape {
    input: Batch,
    /// Normalized pre-scale activations.
    xhat: Batch,
    inv_std: Vec<f64>,
    /// Post-normalization, pre-activation values (activation mask source).
    preact: Batch,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Forward record for a whole stack.
#[derive(Clone, Debug)]
pub struct MlpTape {
    pub mode: ForwardMode,
    layers: Vec<LayerTape>,
}

impl MlpTape {
    /// Batch statistics of layer `i`, for absorbing into running averages.
    pub fn batch_stats(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.layers[i].batch_mean, &self.layers[i].batch_var)
    }
}

/// Gradient buffers mirroring one layer's trainable parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradient buffers for a whole stack.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
            out.extend_from_slice(&l.gamma);
            out.extend_from_slice(&l.beta);
        }
    }
}

/// A stack of [`MlpLayer`]s with the dimension chain given at construction.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    /// Build from a dimension chain such as `[4, 256, 16]`, drawing weights
    /// uniformly within `±1/sqrt(fan_in)`.
    pub fn new(chain: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if chain.len() < 2 || chain.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "dimension chain must have at least two nonzero entries, got {chain:?}"
            )));
        }
        let layers =
            chain.windows(2).map(|pair| MlpLayer::new(pair[0], pair[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn chain(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        c.push(self.out_dim());
        c
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn grads_zeroed(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                    gamma: vec![0.0; l.gamma.len()],
                    beta: vec![0.0; l.beta.len()],
                })
                .collect(),
        }
    }

    /// Run the stack over a batch. The batch must be nonempty — callers skip
    /// degenerate empty batches (a one-node graph has no edges).
    pub fn forward(&self, input: &Batch, mode: ForwardMode) -> Result<(Batch, MlpTape)> {
        if input.cols != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input width",
                expected: self.in_dim(),
                found: input.cols,
            });
        }
        if input.rows == 0 {
            return Err(Error::InvalidArgument("mlp batch is empty".into()));
        }
        let b = input.rows;
        let mut x = input.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (layer.in_dim, layer.out_dim);
            // Affine.
            let mut z = Batch::zeros(b, n_out);
            for i in 0..b {
                let xi = x.row(i);
                let zi = z.row_mut(i);
                for (o, zo) in zi.iter_mut().enumerate() {
                    let wrow = &layer.w[o * n_in..(o + 1) * n_in];
                    let mut acc = layer.b[o];
                    for (wv, xv) in wrow.iter().zip(xi) {
                        acc += wv * xv;
                    }
                    *zo = acc;
                }
            }
            if li + 1 == self.layers.len() {
                // Output layer: scale and shift only, no normalization or
                // rectifier. The tape records identity statistics so its
                // layout matches the hidden layers.
                let xhat = z;
                let mut preact = Batch::zeros(b, n_out);
                for i in 0..b {
                    for o in 0..n_out {
                        preact.row_mut(i)[o] =
                            layer.gamma[o] * xhat.row(i)[o] + layer.beta[o];
                    }
                }
                let out = preact.clone();
                tapes.push(LayerTape {
                    input: std::mem::take(&mut x),
                    xhat,
                    inv_std: vec![1.0; n_out],
                    preact,
                    batch_mean: vec![0.0; n_out],
                    batch_var: vec![1.0; n_out],
                });
                x = out;
                continue;
            }
            // Normalization.
            let mut mean = vec![0.0; n_out];
            let mut var = vec![0.0; n_out];
            for i in 0..b {
                for (o, zv) in z.row(i).iter().enumerate() {
                    mean[o] += zv;
                }
            }
            for m in mean.iter_mut() {
                *m /= b as f64;
            }
            for i in 0..b {
                for (o, zv) in z.row(i).iter().enumerate() {
                    let d = zv - mean[o];
                    var[o] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= b as f64;
            }
            let (use_mean, use_var): (&[f64], &[f64]) = match mode {
                ForwardMode::Train => (&mean, &var),
                ForwardMode::Infer => (&layer.running_mean, &layer.running_var),
            };
            let inv_std: Vec<f64> = use_var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = Batch::zeros(b, n_out);
            let mut preact = Batch::zeros(b, n_out);
            let mut out = Batch::zeros(b, n_out);
            for i in 0..b {
                for o in 0..n_out {
                    let h = (z.row(i)[o] - use_mean[o]) * inv_std[o];
                    xhat.row_mut(i)[o] = h;
                    let y = layer.gamma[o] * h + layer.beta[o];
                    preact.row_mut(i)[o] = y;
                    out.row_mut(i)[o] = if y > 0.0 { y } else { LRELU_SLOPE * y };
                }
            }
            tapes.push(LayerTape {
                input: std::mem::take(&mut x),
                xhat,
                inv_std,
                preact,
                batch_mean: mean,
                batch_var: var,
            });
            x = out;
        }
        Ok((x.clone(), MlpTape { mode, layers: tapes }))
    }

    /// Reverse pass: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the stack input. Only training
    /// tapes can be differentiated — inference normalization is a constant
    /// affine map whose statistics never receive gradients.
    pub fn backward(&self, tape: &MlpTape, d_out: &Batch, grads: &mut MlpGrads) -> Result<Batch> {
        if tape.mode != ForwardMode::Train {
            return Err(Error::InvalidArgument(
                "backward requires a training-mode tape".into(),
            ));
        }
        if tape.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "tape depth",
                expected: self.layers.len(),
                found: tape.layers.len(),
            });
        }
        let b = d_out.rows;
        let mut d = d_out.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let lt = &tape.layers[li];
            if lt.input.rows != b || d.cols != layer.out_dim {
                return Err(Error::InvalidArgument("stale tape for this batch".into()));
            }
            let n_out = layer.out_dim;
            let n_in = layer.in_dim;
            let is_output = li + 1 == self.layers.len();
            let g = &mut grads.layers[li];

            // Activation (the output layer has none).
            let mut d_pre = Batch::zeros(b, n_out);
            for i in 0..b {
                for o in 0..n_out {
                    let slope = if is_output || lt.preact.row(i)[o] > 0.0 {
                        1.0
                    } else {
                        LRELU_SLOPE
                    };
                    d_pre.row_mut(i)[o] = d.row(i)[o] * slope;
                }
            }

            let mut d_z = Batch::zeros(b, n_out);
            if is_output {
                // Scale/shift on the raw affine values: h is z itself.
                for i in 0..b {
                    for o in 0..n_out {
                        let dy = d_pre.row(i)[o];
                        g.gamma[o] += dy * lt.xhat.row(i)[o];
                        g.beta[o] += dy;
                        d_z.row_mut(i)[o] = dy * layer.gamma[o];
                    }
                }
            } else {
                // Normalization (batch statistics).
                let mut sum_dxhat = vec![0.0; n_out];
                let mut sum_dxhat_xhat = vec![0.0; n_out];
                for i in 0..b {
                    for o in 0..n_out {
                        let dy = d_pre.row(i)[o];
                        let h = lt.xhat.row(i)[o];
                        g.gamma[o] += dy * h;
                        g.beta[o] += dy;
                        let dxh = dy * layer.gamma[o];
                        sum_dxhat[o] += dxh;
                        sum_dxhat_xhat[o] += dxh * h;
                    }
                }
                let bf = b as f64;
                for i in 0..b {
                    for o in 0..n_out {
                        let dxh = d_pre.row(i)[o] * layer.gamma[o];
                        let h = lt.xhat.row(i)[o];
                        d_z.row_mut(i)[o] = lt.inv_std[o] / bf
                            * (bf * dxh - sum_dxhat[o] - h * sum_dxhat_xhat[o]);
                    }
                }
            }

            // Affine.
            let mut d_in = Batch::zeros(b, n_in);
            for i in 0..b {
                let xi = lt.input.row(i);
                let dzi = d_z.row(i);
                for (o, &dz) in dzi.iter().enumerate() {
                    g.b[o] += dz;
                    let wrow = &layer.w[o * n_in..(o + 1) * n_in];
                    let grow = &mut g.w[o * n_in..(o + 1) * n_in];
                    let din = d_in.row_mut(i);
                    for j in 0..n_in {
                        grow[j] += dz * xi[j];
                        din[j] += dz * wrow[j];
                    }
                }
            }
            d = d_in;
        }
        Ok(d)
    }

    /// Fold the tape's batch statistics into the running averages:
    /// `running <- momentum * running + (1 - momentum) * batch`. The output
    /// layer keeps no statistics and is skipped.
    pub fn absorb(&mut self, tape: &MlpTape) {
        let n_layers = self.layers.len();
        for (li, (layer, lt)) in self.layers.iter_mut().zip(&tape.layers).enumerate() {
            if li + 1 == n_layers {
                continue;
            }
            for o in 0..layer.out_dim {
                layer.running_mean[o] =
                    BN_MOMENTUM * layer.running_mean[o] + (1.0 - BN_MOMENTUM) * lt.batch_mean[o];
                layer.running_var[o] =
                    BN_MOMENTUM * layer.running_var[o] + (1.0 - BN_MOMENTUM) * lt.batch_var[o];
            }
        }
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
            out.extend_from_slice(&l.gamma);
            out.extend_from_slice(&l.beta);
        }
    }

    /// Consume `self.param_count()` values from the slice, returning the rest.
    pub fn read_params<'a>(&mut self, mut data: &'a [f64]) -> Result<&'a [f64]> {
        for l in &mut self.layers {
            for dst in [&mut l.w, &mut l.b, &mut l.gamma, &mut l.beta] {
                let n = dst.len();
                if data.len() < n {
                    return Err(Error::Format("parameter payload too short".into()));
                }
                dst.copy_from_slice(&data[..n]);
                data = &data[n..];
            }
        }
        Ok(data)
    }

    /// Add `step` elementwise to the parameters, in `append_params` order.
    pub fn apply_step<'a>(&mut self, mut step: &'a [f64]) -> &'a [f64] {
        for l in &mut self.layers {
            for dst in [&mut l.w, &mut l.b, &mut l.gamma, &mut l.beta] {
                for (p, s) in dst.iter_mut().zip(step) {
                    *p += s;
                }
                step = &step[dst.len()..];
            }
        }
        step
    }

    pub fn stat_count(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.out_dim).sum()
    }

    pub fn append_stats(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.running_mean);
            out.extend_from_slice(&l.running_var);
        }
    }

    pub fn read_stats<'a>(&mut self, mut data: &'a [f64]) -> Result<&'a [f64]> {
        for l in &mut self.layers {
            for dst in [&mut l.running_mean, &mut l.running_var] {
                let n = dst.len();
                if data.len() < n {
                    return Err(Error::Format("statistics payload too short".into()));
                }
                dst.copy_from_slice(&data[..n]);
                data = &data[n..];
            }
        }
        Ok(data)
    }

    /// Zero every weight, bias, and shift (scales stay 1): the stack then
    /// maps anything to zero in training mode.
    pub fn zero_params(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = 0.0);
            l.b.iter_mut().for_each(|x| *x = 0.0);
            l.beta.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
