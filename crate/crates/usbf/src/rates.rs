//! Achievable rates at short blocklength and the SINR expressions they gate.
//!
//! With blocklength `n`, payload `D` bits, and decoding error probability
//! `eps`, the per-user rate in nats per channel use is approximated by
//!
//! `R(gamma) = ln(1 + gamma) - theta * sqrt(V(gamma))`
//!
//! with back-off weight `theta = Qinv(eps) / sqrt(n)` and channel dispersion
//! `V(gamma) = 1 - (1 + gamma)^-2`. A user is served adequately when
//! `R(gamma) >= r` with rate target `r = (D / n) * ln 2`; since `R` crosses
//! `r` exactly once, that is equivalent to a minimum-SINR threshold, which
//! [`min_sinr_threshold`] finds by bisection. In [`RateMode::Shannon`] the
//! back-off is dropped and the threshold has the closed form `2^(D/n) - 1`.

use crate::numerics::{q_function_inverse, sherman_morrison_chain, ComplexVector};
use crate::system::{ChannelSample, RateMode, SystemConfig};
use crate::{Error, Result};

/// Beamformers are rejected when their norm strays farther than this from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Precomputed rate-law constants for one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateParams {
    pub data_bits: u32,
    pub blocklength: u32,
    pub error_prob: f64,
    pub mode: RateMode,
    /// Dispersion back-off weight `Qinv(eps) / sqrt(n)`.
    pub theta: f64,
    /// Rate target in nats per channel use, `(D / n) * ln 2`.
    pub r_nats: f64,
}

impl RateParams {
    pub fn new(data_bits: u32, blocklength: u32, error_prob: f64, mode: RateMode) -> Result<Self> {
        if data_bits == 0 || blocklength == 0 {
            return Err(Error::InvalidArgument(
                "data_bits and blocklength must be at least 1".into(),
            ));
        }
        if !(error_prob > 0.0 && error_prob < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "error_prob must lie in (0, 0.5), got {error_prob}"
            )));
        }
        let theta = q_function_inverse(error_prob)? / (blocklength as f64).sqrt();
        let r_nats = data_bits as f64 / blocklength as f64 * std::f64::consts::LN_2;
        Ok(Self { data_bits, blocklength, error_prob, mode, theta, r_nats })
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Self::new(cfg.data_bits, cfg.blocklength, cfg.error_prob, cfg.rate_mode)
    }
}

/// `ln(1 + gamma)` in nats per channel use.
pub fn shannon_capacity(gamma: f64) -> Result<f64> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("SINR must be finite and >= 0, got {gamma}")));
    }
    Ok((1.0 + gamma).ln())
}

/// Channel dispersion `1 - (1 + gamma)^-2`, in `[0, 1)`.
pub fn channel_dispersion(gamma: f64) -> Result<f64> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("SINR must be finite and >= 0, got {gamma}")));
    }
    let c = 1.0 + gamma;
    Ok(1.0 - 1.0 / (c * c))
}

#[inline]
fn fbl_rate_unchecked(gamma: f64, rp: &RateParams) -> f64 {
    let c = 1.0 + gamma;
    let cap = c.ln();
    match rp.mode {
        RateMode::Shannon => cap,
        RateMode::FiniteBlocklength => cap - rp.theta * (1.0 - 1.0 / (c * c)).sqrt(),
    }
}

/// Achievable rate at SINR `gamma` under `rp`, in nats per channel use.
/// Equals [`shannon_capacity`] when the mode is [`RateMode::Shannon`].
pub fn fbl_rate(gamma: f64, rp: &RateParams) -> Result<f64> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("SINR must be finite and >= 0, got {gamma}")));
    }
    Ok(fbl_rate_unchecked(gamma, rp))
}

/// Smallest SINR whose rate meets the target `r_nats`.
///
/// The rate is unbounded above, so the threshold always exists; bisection
/// narrows it to a width of 1e-9 (relative for large thresholds, where an
/// absolute width would undershoot the float spacing and never terminate).
/// In Shannon mode the closed form `2^(D/n) - 1` is returned directly.
pub fn min_sinr_threshold(rp: &RateParams) -> Result<f64> {
    if rp.mode == RateMode::Shannon {
        let ratio = rp.data_bits as f64 / rp.blocklength as f64;
        return Ok(2f64.powf(ratio) - 1.0);
    }
    let target = rp.r_nats;
    let mut lo = 0.0_f64;
    let mut hi = 1e6_f64;
    while fbl_rate_unchecked(hi, rp) < target {
        hi *= 10.0;
        if hi > 1e30 {
            return Err(Error::NumericalBreakdown(
                "rate target unreachable below SINR 1e30".into(),
            ));
        }
    }
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval is a single float step: as tight as f64 gets
        }
        if fbl_rate_unchecked(mid, rp) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// SINR expressions
// ---------------------------------------------------------------------------

/// Squared magnitude of the whitened-channel / beamformer coupling.
#[inline]
pub fn coupling_gain(hbar: &ComplexVector, w: &ComplexVector) -> f64 {
    hbar.dot_h(w).norm_sqr()
}

fn check_unit_norm(w: &ComplexVector, who: usize) -> Result<()> {
    if (w.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "beamformer {who} is not unit norm (|w| = {})",
            w.norm()
        )));
    }
    Ok(())
}

/// Downlink SINR of user `k` when the users in `active` are served with
/// powers `p` and unit-norm beamformers `w`:
///
/// `p_k |hbar_k^H w_k|^2 / (1 + sum_{l in active, l != k} p_l |hbar_k^H w_l|^2)`
///
/// Interference couples user k's own channel with the other users' beams.
pub fn downlink_sinr(
    sample: &ChannelSample,
    p: &[f64],
    w: &[ComplexVector],
    k: usize,
    active: &[usize],
) -> Result<f64> {
    if p.len() != sample.n_users() || w.len() != sample.n_users() {
        return Err(Error::DimensionMismatch {
            context: "downlink_sinr powers/beamformers",
            expected: sample.n_users(),
            found: p.len().min(w.len()),
        });
    }
    if !active.contains(&k) {
        return Err(Error::InvalidArgument(format!("user {k} is not in the active set")));
    }
    let hbar_k = sample.whitened(k);
    let mut interference = 0.0;
    for &l in active {
        if p[l] < 0.0 {
            return Err(Error::InvalidArgument(format!("negative power for user {l}")));
        }
        check_unit_norm(&w[l], l)?;
        if l != k {
            interference += p[l] * coupling_gain(&hbar_k, &w[l]);
        }
    }
    Ok(p[k] * coupling_gain(&hbar_k, &w[k]) / (1.0 + interference))
}

/// Virtual uplink SINR of user `k` with uplink powers `q`, receive beamformer
/// `w_k`, and interfering users `user_set`:
///
/// `q_k |hbar_k^H w_k|^2 / (1 + sum_{l in user_set, l != k} q_l |hbar_l^H w_k|^2)`
///
/// Interference couples the other users' channels with user k's own beam —
/// the mirror image of the downlink expression.
pub fn uplink_sinr(
    sample: &ChannelSample,
    q: &[f64],
    w_k: &ComplexVector,
    k: usize,
    user_set: &[usize],
) -> Result<f64> {
    if q.len() != sample.n_users() {
        return Err(Error::DimensionMismatch {
            context: "uplink_sinr powers",
            expected: sample.n_users(),
            found: q.len(),
        });
    }
    if !user_set.contains(&k) {
        return Err(Error::InvalidArgument(format!("user {k} is not in the user set")));
    }
    check_unit_norm(w_k, k)?;
    let mut interference = 0.0;
    for &l in user_set {
        if q[l] < 0.0 {
            return Err(Error::InvalidArgument(format!("negative power for user {l}")));
        }
        if l != k {
            interference += q[l] * coupling_gain(&sample.whitened(l), w_k);
        }
    }
    Ok(q[k] * coupling_gain(&sample.whitened(k), w_k) / (1.0 + interference))
}

/// Virtual uplink SINRs of all users under the optimal (MMSE) receive
/// beamformers, without forming them explicitly:
///
/// `gamma_k = q_k |hbar_k^H T hbar_k|^2
///            / (sum_{l != k} q_l |hbar_l^H T hbar_k|^2 + ||T hbar_k||^2)`
///
/// where `T = (I + sum_l q_l hbar_l hbar_l^H)^{-1}` comes from the rank-1
/// update chain in `O(K N^2)`. Users with `q_k = 0` get SINR 0.
pub fn mmse_uplink_sinr(sample: &ChannelSample, q: &[f64]) -> Result<Vec<f64>> {
    let k_users = sample.n_users();
    if q.len() != k_users {
        return Err(Error::DimensionMismatch {
            context: "mmse_uplink_sinr powers",
            expected: k_users,
            found: q.len(),
        });
    }
    let hbar = sample.whitened_all();
    let t = sherman_morrison_chain(&hbar, q, sample.n_antennas())?;

    let v: Vec<ComplexVector> = (0..k_users).map(|k| t.matvec(&hbar[k])).collect();
    let mut out = Vec::with_capacity(k_users);
    for k in 0..k_users {
        if q[k] == 0.0 {
            out.push(0.0);
            continue;
        }
        let numer = q[k] * hbar[k].dot_h(&v[k]).norm_sqr();
        let mut denom = v[k].norm_sq();
        for l in 0..k_users {
            if l != k {
                denom += q[l] * hbar[l].dot_h(&v[k]).norm_sqr();
            }
        }
        out.push(numer / denom);
    }
    Ok(out)
}

/// [`mmse_uplink_sinr`] together with its full Jacobian: entry `[k][m]` of
/// the second return value is the derivative of user `k`'s SINR with respect
/// to `q_m`.
///
/// Writing `v_k = T hbar_k`, `c_ab = hbar_a^H v_b`, and `G_km = v_k^H v_m`,
/// the resolvent differentiates as `dT/dq_m = -v_m v_m^H`, which gives
/// `dc_ab/dq_m = -c_am c_mb` and `d||v_k||^2/dq_m = -2 Re(G_km c_mk)`; the
/// quotient rule on the SINR does the rest. Everything reuses the one rank-1
/// update chain, so the full Jacobian costs `O(K^2 N + K^3)`.
pub fn mmse_uplink_sinr_with_jacobian(
    sample: &ChannelSample,
    q: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k_users = sample.n_users();
    if q.len() != k_users {
        return Err(Error::DimensionMismatch {
            context: "mmse_uplink_sinr_with_jacobian powers",
            expected: k_users,
            found: q.len(),
        });
    }
    let hbar = sample.whitened_all();
    let t = sherman_morrison_chain(&hbar, q, sample.n_antennas())?;
    let v: Vec<ComplexVector> = (0..k_users).map(|k| t.matvec(&hbar[k])).collect();

    // c[a][b] = hbar_a^H v_b; g[a][b] = v_a^H v_b.
    let c: Vec<Vec<num_complex::Complex64>> =
        (0..k_users).map(|a| (0..k_users).map(|b| hbar[a].dot_h(&v[b])).collect()).collect();
    let g: Vec<Vec<num_complex::Complex64>> =
        (0..k_users).map(|a| (0..k_users).map(|b| v[a].dot_h(&v[b])).collect()).collect();

    let mut gammas = Vec::with_capacity(k_users);
    let mut jac = vec![vec![0.0; k_users]; k_users];
    for k in 0..k_users {
        let own = c[k][k].norm_sqr();
        let numer = q[k] * own;
        let mut denom = v[k].norm_sq();
        for l in 0..k_users {
            if l != k {
                denom += q[l] * c[l][k].norm_sqr();
            }
        }
        // Matches the early-out in mmse_uplink_sinr: zero weight, zero SINR.
        gammas.push(if q[k] == 0.0 { 0.0 } else { numer / denom });

        for m in 0..k_users {
            let mut d_numer = -2.0 * q[k] * (c[k][k].conj() * c[k][m] * c[m][k]).re;
            if m == k {
                d_numer += own;
            }
            let mut d_denom = -2.0 * (c[m][k] * g[k][m]).re;
            if m != k {
                d_denom += c[m][k].norm_sqr();
            }
            for l in 0..k_users {
                if l != k {
                    d_denom -= 2.0 * q[l] * (c[l][k].conj() * c[l][m] * c[m][k]).re;
                }
            }
            jac[k][m] = (d_numer * denom - numer * d_denom) / (denom * denom);
        }
    }
    Ok((gammas, jac))
}

/// Finite-difference fallback for the Jacobian of [`mmse_uplink_sinr`]:
/// central differences with step `max(1e-6, 1e-4 * q_m)`, one-sided at the
/// `q_m = 0` boundary where a negative power would be rejected.
pub fn mmse_uplink_sinr_jacobian_fd(
    sample: &ChannelSample,
    q: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k_users = sample.n_users();
    if q.len() != k_users {
        return Err(Error::DimensionMismatch {
            context: "mmse_uplink_sinr_jacobian_fd powers",
            expected: k_users,
            found: q.len(),
        });
    }
    let mut jac = vec![vec![0.0; k_users]; k_users];
    let mut probe = q.to_vec();
    for m in 0..k_users {
        let h = (1e-4 * q[m]).max(1e-6);
        probe[m] = q[m] + h;
        let up = mmse_uplink_sinr(sample, &probe)?;
        let (down, width) = if q[m] >= h {
            probe[m] = q[m] - h;
            (mmse_uplink_sinr(sample, &probe)?, 2.0 * h)
        } else {
            (mmse_uplink_sinr(sample, q)?, h)
        };
        probe[m] = q[m];
        for k in 0..k_users {
            jac[k][m] = (up[k] - down[k]) / width;
        }
    }
    Ok(jac)
}

// ---------------------------------------------------------------------------
