//! Wireless-graph features for the learned schedulers.
//!
//! Each candidate user is a node of a complete directed graph. The node
//! feature is the self-coupling of the user's whitened channel with its raw
//! channel, and the directed edge feature from `u` to `v` is the magnitude of
//! the cross-coupling between `u`'s whitened channel and `v`'s raw channel.
//! These magnitudes are invariant to per-user phase rotations, so relabeling
//! users permutes the features without changing any value.

use crate::system::ChannelSample;

/// Feature view of one channel realization.
#[derive(Clone, Debug)]
pub struct GraphInstance {
    /// Node count K.
    pub n: usize,
    /// Per-node self-coupling `||h_v||^2 / sigma_v`.
    pub x: Vec<f64>,
    /// Directed edge magnitudes, row-major `K x K` with `e[u * n + v]`
    /// holding the feature of edge `u -> v`; the diagonal is zero.
    pub e: Vec<f64>,
}

impl GraphInstance {
    #[inline]
    pub fn edge(&self, u: usize, v: usize) -> f64 {
        self.e[u * self.n + v]
    }
}

/// Computes the feature graph of a sample.
pub fn build_graph(sample: &ChannelSample) -> GraphInstance {
    let k = sample.n_users();
    let whitened = sample.whitened_all();
    let x: Vec<f64> =
        (0..k).map(|v| whitened[v].dot_h(sample.channel(v)).norm()).collect();
    let mut e = vec![0.0; k * k];
    for u in 0..k {
        for v in 0..k {
            if u != v {
                e[u * k + v] = whitened[u].dot_h(sample.channel(v)).norm();
            }
        }
    }
    GraphInstance { n: k, x, e }
}

// ---------------------------------------------------------------------------
