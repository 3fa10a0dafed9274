//! Convolutional baseline scheduler: a shared per-node stack over summary
//! features, with no message passing.
//!
//! Each user is described by three scalars — its node feature and the max
//! and mean of its incoming edge features — and a width-1 convolution chain
//! (equivalently, one MLP applied to every node with shared weights) maps
//! them straight to the `(kappa, q)` heads. It trains through the same
//! projection, loss, and primal-dual loop as the graph network, which is the
//! point: the comparison isolates what message passing buys.

use crate::jeepon::{
    Batch, Checkpoint, ForwardMode, GraphInstance, Mlp, PolicyNet, TrainAnnotations,
};
use crate::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hidden widths of the published baseline.
pub const DEFAULT_CNN_HIDDEN: [usize; 5] = [256, 128, 64, 32, 16];

/// Per-node input features; see [`node_features`].
pub const CNN_IN_DIM: usize = 3;
/// `(kappa, q)` heads.
pub const CNN_OUT_DIM: usize = 2;

/// Per-node summary features: `[x_v, max_u e_uv, mean_u e_uv]` over incoming
/// edges `u != v`. A single-node graph has no edges; both aggregates are 0.
pub fn node_features(g: &GraphInstance) -> Batch {
    let k = g.n;
    let mut feats = Batch::zeros(k, CNN_IN_DIM);
    for v in 0..k {
        let row = feats.row_mut(v);
        row[0] = g.x[v];
        if k > 1 {
            let mut best = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for u in 0..k {
                if u != v {
                    let e = g.edge(u, v);
                    sum += e;
                    best = best.max(e);
                }
            }
            row[1] = best;
            row[2] = sum / (k - 1) as f64;
        }
    }
    feats
}

/// The baseline model: one shared stack from features to heads.
#[derive(Clone, Debug)]
pub struct CnnModel {
    pub stack: Mlp,
}

pub struct CnnTape {
    tape: crate::jeepon::MlpTape,
    n: usize,
}

impl CnnModel {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_hidden(&DEFAULT_CNN_HIDDEN, seed)
    }

    /// `hidden` holds the interior widths; input and output dims are fixed.
    pub fn with_hidden(hidden: &[usize], seed: u64) -> Result<Self> {
        let mut chain = vec![CNN_IN_DIM];
        chain.extend_from_slice(hidden);
        chain.push(CNN_OUT_DIM);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { stack: Mlp::new(&chain, &mut rng)? })
    }
}

impl PolicyNet for CnnModel {
    type Tape = CnnTape;
    const KIND: &'static str = "cnn";

    fn forward(
        &self,
        graph: &GraphInstance,
        mode: ForwardMode,
    ) -> Result<(Vec<f64>, Vec<f64>, CnnTape)> {
        let k = graph.n;
        if k == 0 || graph.x.len() != k || graph.e.len() != k * k {
            return Err(Error::InvalidArgument("malformed graph instance".into()));
        }
        let feats = node_features(graph);
        let (out, tape) = self.stack.forward(&feats, mode)?;
        let kappa_raw = (0..k).map(|v| out.row(v)[0]).collect();
        let q_raw = (0..k).map(|v| out.row(v)[1]).collect();
        Ok((kappa_raw, q_raw, CnnTape { tape, n: k }))
    }

    fn backward(&self, tape: &CnnTape, d_kappa_raw: &[f64], d_q_raw: &[f64]) -> Result<Vec<f64>> {
        if d_kappa_raw.len() != tape.n || d_q_raw.len() != tape.n {
            return Err(Error::DimensionMismatch {
                context: "head gradient length",
                expected: tape.n,
                found: d_kappa_raw.len().min(d_q_raw.len()),
            });
        }
        let mut d_out = Batch::zeros(tape.n, CNN_OUT_DIM);
        for v in 0..tape.n {
            d_out.row_mut(v)[0] = d_kappa_raw[v];
            d_out.row_mut(v)[1] = d_q_raw[v];
        }
        let mut grads = self.stack.grads_zeroed();
        self.stack.backward(&tape.tape, &d_out, &mut grads)?;
        let mut flat = Vec::with_capacity(self.param_count());
        grads.flatten_into(&mut flat);
        Ok(flat)
    }

    fn absorb_batch_stats(&mut self, tape: &CnnTape) {
        self.stack.absorb(&tape.tape);
    }

    fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.stack.append_params(&mut out);
        out
    }

    fn apply_step(&mut self, step: &[f64]) -> Result<()> {
        if step.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter step length",
                expected: self.param_count(),
                found: step.len(),
            });
        }
        self.stack.apply_step(step);
        Ok(())
    }

    fn to_checkpoint(&self, train: TrainAnnotations) -> Checkpoint {
        let mut stats = Vec::with_capacity(self.stack.stat_count());
        self.stack.append_stats(&mut stats);
        Checkpoint {
            kind: Self::KIND.to_string(),
            // The baseline has no message embedding or rounds; the header
            // still records placeholders so the format stays uniform.
            m: 0,
            n_layers: 1,
            strict: true,
            chains: vec![self.stack.chain()],
            train,
            params: self.params(),
            stats,
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
        if cp.chains.len() != 1 {
            return Err(Error::Format(format!(
                "baseline checkpoint must hold exactly one chain, found {}",
                cp.chains.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut stack = Mlp::new(&cp.chains[0], &mut rng)?;
        if stack.in_dim() != CNN_IN_DIM || stack.out_dim() != CNN_OUT_DIM {
            return Err(Error::Format(format!(
                "baseline chain is {}->{}, expected {CNN_IN_DIM}->{CNN_OUT_DIM}",
                stack.in_dim(),
                stack.out_dim()
            )));
        }
        let rest = stack.read_params(&cp.params)?;
        if !rest.is_empty() {
            return Err(Error::Format("parameter payload has trailing values".into()));
        }
        let rest = stack.read_stats(&cp.stats)?;
        if !rest.is_empty() {
            return Err(Error::Format("statistics payload has trailing values".into()));
        }
        Ok(Self { stack })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jeepon::{build_graph, pac_project, read_checkpoint, write_checkpoint};
    use crate::system::{generate_dataset, SystemConfig};
    use rand::Rng as _;

    fn desk_cfg() -> SystemConfig {
        SystemConfig {
            n_antennas: 4,
            n_users: 5,
            d_l: 50.0,
            d_r: 100.0,
            rng_seed: 55,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn default_chain_matches_published_dimensions() {
        let model = CnnModel::new(1).unwrap();
        assert_eq!(model.stack.chain(), vec![3, 256, 128, 64, 32, 16, 2]);
    }

    #[test]
    fn features_are_node_value_with_incoming_max_and_mean() {
        let sample = &generate_dataset(&desk_cfg(), 1)[0];
        let g = build_graph(sample);
        let feats = node_features(&g);
        for v in 0..g.n {
            let incoming: Vec<f64> =
                (0..g.n).filter(|&u| u != v).map(|u| g.edge(u, v)).collect();
            let max = incoming.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = incoming.iter().sum::<f64>() / incoming.len() as f64;
            assert_eq!(feats.row(v)[0], g.x[v]);
            assert!((feats.row(v)[1] - max).abs() < 1e-15);
            assert!((feats.row(v)[2] - mean).abs() < 1e-15);
        }

        let single = SystemConfig { n_users: 1, ..desk_cfg() };
        let g1 = build_graph(&generate_dataset(&single, 1)[0]);
        let f1 = node_features(&g1);
        assert_eq!(f1.row(0)[1], 0.0);
        assert_eq!(f1.row(0)[2], 0.0);
    }

    #[test]
    fn relabeling_users_permutes_the_heads() {
        let model = CnnModel::with_hidden(&[8, 6], 11).unwrap();
        let cfg = SystemConfig { n_users: 6, ..desk_cfg() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for sample in &generate_dataset(&cfg, 3) {
            let mut perm: Vec<usize> = (0..cfg.n_users).collect();
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let (kr, qr, _) =
                model.forward(&build_graph(sample), ForwardMode::Train).unwrap();
            let (krp, qrp, _) = model
                .forward(&build_graph(&sample.permuted(&perm)), ForwardMode::Train)
                .unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                assert!((krp[i] - kr[pi]).abs() <= 1e-9);
                assert!((qrp[i] - qr[pi]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn full_chain_gradient_matches_finite_differences() {
        use crate::jeepon::{
            head_gradients, lagrangian_loss, pac_backward, pac_project_traced, LagrangeState,
            SinrGradPath,
        };
        let cfg = SystemConfig { n_users: 4, n_antennas: 3, ..desk_cfg() };
        let sample = &generate_dataset(&cfg, 1)[0];
        let g = build_graph(sample);
        let p_budget = 1.0;
        let gamma_tilde = vec![5.054; 4];
        let lag = LagrangeState { mu: 0.7, nu: 0.4 };

        let model = (0..64u64)
            .map(|seed| CnnModel::with_hidden(&[5, 4], seed).unwrap())
            .find(|model| {
                let (kr, qr, _) = model.forward(&g, ForwardMode::Train).unwrap();
                let (_, _, ptape) = pac_project_traced(&kr, &qr, p_budget);
                ptape.scale() < 1.0
                    && qr.iter().any(|&x| x > 1e-3 && x < p_budget - 1e-3)
                    && kr.iter().any(|&x| x > 1e-3 && x < 1.0 - 1e-3)
            })
            .expect("no initialization exercises every projection branch");
        let loss_of = |m: &CnnModel| -> f64 {
            let (kr, qr, _) = m.forward(&g, ForwardMode::Train).unwrap();
            let (kappa, q) = pac_project(&kr, &qr, p_budget);
            lagrangian_loss(sample, &kappa, &q, &gamma_tilde, lag).unwrap().loss
        };

        let (kr, qr, tape) = model.forward(&g, ForwardMode::Train).unwrap();
        let (kappa, q, ptape) = pac_project_traced(&kr, &qr, p_budget);
        let (_, d_kappa, d_q) =
            head_gradients(sample, &kappa, &q, &gamma_tilde, lag, SinrGradPath::Analytic)
                .unwrap();
        let (d_kr, d_qr) = pac_backward(&ptape, &d_kappa, &d_q);
        let flat = model.backward(&tape, &d_kr, &d_qr).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        for i in 0..model.param_count() {
            let mut step = vec![0.0; model.param_count()];
            step[i] = h;
            let mut plus = model.clone();
            plus.apply_step(&step).unwrap();
            step[i] = -h;
            let mut minus = model.clone();
            minus.apply_step(&step).unwrap();
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let scale = flat[i].abs().max(fd.abs());
            if scale < 1e-7 {
                continue;
            }
            assert!(
                (flat[i] - fd).abs() / scale.max(1e-4) < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                flat[i]
            );
            checked += 1;
        }
        assert!(checked > model.param_count() / 4, "only {checked} active params");
    }

    #[test]
    fn checkpoint_round_trips_and_guards_kind() {
        let mut model = CnnModel::with_hidden(&[5, 4], 3).unwrap();
        let sample = &generate_dataset(&desk_cfg(), 1)[0];
        let g = build_graph(sample);
        let (_, _, tape) = model.forward(&g, ForwardMode::Train).unwrap();
        model.absorb_batch_stats(&tape);

        let cp = model.to_checkpoint(TrainAnnotations::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.ckpt");
        write_checkpoint(&path, &cp).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded, cp);
        let restored = CnnModel::from_checkpoint(&loaded).unwrap();
        assert_eq!(restored.params(), model.params());
        let (kr0, qr0, _) = model.forward(&g, ForwardMode::Infer).unwrap();
        let (kr1, qr1, _) = restored.forward(&g, ForwardMode::Infer).unwrap();
        assert_eq!(kr0, kr1);
        assert_eq!(qr0, qr1);

        // Model families refuse each other's checkpoints.
        let jeepon_cp = crate::jeepon::JeeponModel::with_hidden(2, 1, true, &[3], &[3], 1)
            .unwrap()
            .to_checkpoint(TrainAnnotations::default());
        assert!(CnnModel::from_checkpoint(&jeepon_cp).is_err());
    }

    #[test]
    fn trains_through_the_shared_loop() {
        use crate::jeepon::LagrangeState;
        use crate::trainer::{train, TrainHyper};
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 8);
        let rp = crate::rates::RateParams::new(
            cfg.data_bits,
            cfg.blocklength,
            cfg.error_prob,
            cfg.rate_mode,
        )
        .unwrap();
        let hyper = TrainHyper { epochs: 3, lr: 1e-3, ..TrainHyper::default() };
        let out = train(
            CnnModel::with_hidden(&[6, 4], 2).unwrap(),
            &samples,
            &rp,
            cfg.power_budget(),
            &hyper,
            LagrangeState::default(),
        )
        .unwrap();
        assert_eq!(out.history.len(), 3);
        assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
    }
}
