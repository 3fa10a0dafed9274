//! Beamformer construction, uplink/downlink power mappings, and the
//! minimum-power feasibility solver.
//!
//! For a scheduled set S with per-user SINR targets, the cheapest transmit
//! strategy is found in the virtual uplink: alternate MMSE receive
//! beamformers with the standard interference-function power update
//! `q_k <- target_k * q_k / sinr_k(q)` until the uplink SINRs are tight,
//! then translate the uplink powers to downlink powers through a linear
//! system that shares the beamformers. At the fixed point both directions
//! spend the same total power and both meet the targets with equality.

use crate::numerics::{sherman_morrison_chain, ComplexVector};
use crate::rates::{coupling_gain, downlink_sinr, fbl_rate, uplink_sinr, RateParams};
use crate::system::ChannelSample;
use crate::{Error, Result};

/// One scheduling decision with its supporting powers and beamformers.
///
/// All vectors are indexed by user over the full population; users outside
/// the scheduled set carry zero entries and zero-length-irrelevant beams.
#[derive(Clone, Debug)]
pub struct Allocation {
    /// Scheduling indicators in `[0, 1]`; a user is scheduled when > 0.5.
    pub kappa: Vec<f64>,
    /// Virtual uplink powers, zero off the scheduled set.
    pub q: Vec<f64>,
    /// Downlink powers, zero off the scheduled set.
    pub p: Vec<f64>,
    /// Transmit beamformers; unit norm for every user with `kappa > 0`.
    pub w: Vec<ComplexVector>,
}

impl Allocation {
    pub fn empty(n_users: usize, n_antennas: usize) -> Self {
        Self {
            kappa: vec![0.0; n_users],
            q: vec![0.0; n_users],
            p: vec![0.0; n_users],
            w: vec![ComplexVector::zeros(n_antennas); n_users],
        }
    }

    /// Indices of scheduled users, ascending.
    pub fn scheduled(&self) -> Vec<usize> {
        (0..self.kappa.len()).filter(|&k| self.kappa[k] > 0.5).collect()
    }

    pub fn total_downlink_power(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn total_uplink_power(&self) -> f64 {
        self.q.iter().sum()
    }
}

/// Scales `q` down by `p_budget / sum(q)` when the sum exceeds the budget,
/// repeating if accumulated rounding still leaves the sum a hair over.
/// Returns the cumulative scale (1.0 when nothing changed). Entries are
/// assumed nonnegative; the result always satisfies `sum(q) <= p_budget`,
/// making the operation exactly idempotent.
pub fn rescale_into_budget(q: &mut [f64], p_budget: f64) -> f64 {
    let mut scale = 1.0;
    loop {
        let sum: f64 = q.iter().sum();
        if sum <= p_budget || sum == 0.0 {
            return scale;
        }
        let s = p_budget / sum;
        for x in q.iter_mut() {
            *x *= s;
        }
        scale *= s;
    }
}

/// Matched filter on the whitened channel: `w = hbar_k / ||hbar_k||`.
pub fn mrt_beamformer(sample: &ChannelSample, k: usize) -> Result<ComplexVector> {
    sample.whitened(k).normalized()
}

/// MMSE receive beamformer for user `k` at uplink powers `q`:
/// `w_k ∝ (I + sum_l q_l hbar_l hbar_l^H)^{-1} hbar_k`, unit norm.
pub fn mmse_beamformer(sample: &ChannelSample, q: &[f64], k: usize) -> Result<ComplexVector> {
    let hbar = sample.whitened_all();
    let t = sherman_morrison_chain(&hbar, q, sample.n_antennas())?;
    t.matvec(&hbar[k]).normalized()
}

/// MMSE beamformers for every user in `users`, sharing one inverse.
/// Returns a full-length vector; users outside `users` keep zero beams.
pub fn mmse_beamformers(
    sample: &ChannelSample,
    q: &[f64],
    users: &[usize],
) -> Result<Vec<ComplexVector>> {
    let hbar = sample.whitened_all();
    let t = sherman_morrison_chain(&hbar, q, sample.n_antennas())?;
    let mut w = vec![ComplexVector::zeros(sample.n_antennas()); sample.n_users()];
    for &k in users {
        w[k] = t.matvec(&hbar[k]).normalized()?;
    }
    Ok(w)
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().partial_cmp(&a[s * n + col].abs()).unwrap())
            .unwrap();
        if a[pivot_row * n + col].abs() < 1e-13 * scale {
            return Err(Error::SingularSystem(format!(
                "power-mapping system is singular at column {col}"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Shared skeleton of the two power mappings. `uplink` selects which side of
/// the coupling matrix is transposed: row k couples beam k with the other
/// channels (uplink), or channel k with the other beams (downlink).
fn solve_power_mapping(
    sample: &ChannelSample,
    w: &[ComplexVector],
    gammas: &[f64],
    s: &[usize],
    uplink: bool,
) -> Result<Vec<f64>> {
    let m = s.len();
    if gammas.len() != m {
        return Err(Error::DimensionMismatch {
            context: "power mapping targets",
            expected: m,
            found: gammas.len(),
        });
    }
    let mut a = vec![0.0; m * m];
    for (i, &k) in s.iter().enumerate() {
        for (j, &l) in s.iter().enumerate() {
            if i == j {
                if !(gammas[i] > 0.0 && gammas[i].is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "SINR target for user {k} must be positive, got {}",
                        gammas[i]
                    )));
                }
                a[i * m + j] = coupling_gain(&sample.whitened(k), &w[k]) / gammas[i];
            } else if uplink {
                a[i * m + j] = -coupling_gain(&sample.whitened(l), &w[k]);
            } else {
                a[i * m + j] = -coupling_gain(&sample.whitened(k), &w[l]);
            }
        }
    }
    let x = solve_linear(a, vec![1.0; m], m)?;
    let mut full = vec![0.0; sample.n_users()];
    for (i, &k) in s.iter().enumerate() {
        if x[i] < -1e-9 {
            return Err(Error::InfeasibleOutput(format!(
                "negative power {} for user {k}: targets unattainable with these beamformers",
                x[i]
            )));
        }
        full[k] = x[i].max(0.0);
    }
    Ok(full)
}

/// Uplink powers that make every user in `s` hit its SINR target in the
/// virtual uplink with the given beamformers. Targets are aligned with `s`.
pub fn downlink_to_uplink_powers(
    sample: &ChannelSample,
    w: &[ComplexVector],
    gammas: &[f64],
    s: &[usize],
) -> Result<Vec<f64>> {
    solve_power_mapping(sample, w, gammas, s, true)
}

/// Downlink powers that make every user in `s` hit its SINR target on the
/// downlink with the given beamformers. Targets are aligned with `s`.
pub fn uplink_to_downlink_powers(
    sample: &ChannelSample,
    w: &[ComplexVector],
    gammas: &[f64],
    s: &[usize],
) -> Result<Vec<f64>> {
    solve_power_mapping(sample, w, gammas, s, false)
}

/// Result of a minimum-power feasibility solve.
#[derive(Clone, Debug)]
pub struct MinPowerSolution {
    /// Converged and the downlink budget covers the required power.
    pub feasible: bool,
    /// Converged uplink powers (full length, zero off the set).
    pub q: Vec<f64>,
    /// Downlink powers meeting the targets (zeros unless converged).
    pub p: Vec<f64>,
    /// MMSE beamformers at the final uplink powers.
    pub w: Vec<ComplexVector>,
    /// Power-update iterations consumed.
    pub iterations: usize,
}

impl MinPowerSolution {
    pub fn total_downlink_power(&self) -> f64 {
        self.p.iter().sum()
    }
    pub fn total_uplink_power(&self) -> f64 {
        self.q.iter().sum()
    }
}

/// Cheapest way to serve every user in `s` at its SINR target, if the budget
/// `p_budget` allows it.
///
/// Alternates MMSE beamformers at the current uplink powers with the power
/// update `q_k <- target_k * q_k / sinr_k` from the tiny uniform start
/// `1e-3 * p_budget / |s|`. The iteration either contracts onto the unique
/// fixed point (targets met with equality) or grows without bound; growth
/// past `1e3 * p_budget` is reported as infeasible rather than an error.
/// On convergence the downlink powers come from the dual linear system and
/// spend the same total power as the uplink.
pub fn min_power_feasibility(
    sample: &ChannelSample,
    s: &[usize],
    gamma_targets: &[f64],
    p_budget: f64,
    max_iter: usize,
    tol: f64,
) -> Result<MinPowerSolution> {
    let k_users = sample.n_users();
    if s.is_empty() {
        return Err(Error::InvalidArgument("scheduled set must be nonempty".into()));
    }
    if gamma_targets.len() != s.len() {
        return Err(Error::DimensionMismatch {
            context: "feasibility targets",
            expected: s.len(),
            found: gamma_targets.len(),
        });
    }
    let mut seen = vec![false; k_users];
    for &k in s {
        if k >= k_users {
            return Err(Error::InvalidArgument(format!("user index {k} out of range")));
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidArgument(format!("user {k} listed twice")));
        }
    }
    if !(p_budget > 0.0 && p_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("power budget must be positive, got {p_budget}")));
    }

    let hbar = sample.whitened_all();
    let mut q = vec![0.0; k_users];
    for &k in s {
        q[k] = 1e-3 * p_budget / s.len() as f64;
    }
    let mut w = vec![ComplexVector::zeros(sample.n_antennas()); k_users];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let t = sherman_morrison_chain(&hbar, &q, sample.n_antennas())?;
        for &k in s {
            w[k] = t.matvec(&hbar[k]).normalized()?;
        }
        let mut max_rel_change = 0.0f64;
        let mut q_next = q.clone();
        for (i, &k) in s.iter().enumerate() {
            let sinr = uplink_sinr(sample, &q, &w[k], k, s)?;
            if !(sinr > 0.0) {
                return Err(Error::NumericalBreakdown(format!(
                    "uplink SINR of user {k} collapsed to {sinr}"
                )));
            }
            q_next[k] = gamma_targets[i] * q[k] / sinr;
            max_rel_change = max_rel_change.max((q_next[k] - q[k]).abs() / q[k].max(1e-300));
        }
        q = q_next;
        if q.iter().sum::<f64>() > 1e3 * p_budget {
            return Ok(MinPowerSolution { feasible: false, q, p: vec![0.0; k_users], w, iterations });
        }
        if max_rel_change <= tol {
            converged = true;
            break;
        }
    }

    if !converged {
        return Ok(MinPowerSolution { feasible: false, q, p: vec![0.0; k_users], w, iterations });
    }

    // Refresh the beamformers at the converged powers before mapping down.
    let t = sherman_morrison_chain(&hbar, &q, sample.n_antennas())?;
    for &k in s {
        w[k] = t.matvec(&hbar[k]).normalized()?;
    }
    let p = uplink_to_downlink_powers(sample, &w, gamma_targets, s)?;
    let feasible = p.iter().sum::<f64>() <= p_budget;
    Ok(MinPowerSolution { feasible, q, p, w, iterations })
}

/// Independent allocation audit: every scheduled user's downlink rate meets
/// the target, every scheduled beam is unit norm, and the total downlink
/// power fits the budget. Pure checker — shares no state with the solvers.
pub fn verify_allocation(
    sample: &ChannelSample,
    alloc: &Allocation,
    rp: &RateParams,
    p_budget: f64,
) -> Result<()> {
    let s = alloc.scheduled();
    let total: f64 = alloc.p.iter().sum();
    if total > p_budget + 1e-6 {
        return Err(Error::InfeasibleOutput(format!(
            "total downlink power {total} exceeds budget {p_budget}"
        )));
    }
    for &k in &s {
        let norm = alloc.w[k].norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InfeasibleOutput(format!(
                "scheduled beam {k} has norm {norm}"
            )));
        }
    }
    for &k in &s {
        let gamma = downlink_sinr(sample, &alloc.p, &alloc.w, k, &s)?;
        let rate = fbl_rate(gamma, rp)?;
        if rate < rp.r_nats - 1e-6 {
            return Err(Error::InfeasibleOutput(format!(
                "user {k} achieves rate {rate} below target {}",
                rp.r_nats
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{generate_dataset, SystemConfig};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_cfg() -> SystemConfig {
        SystemConfig {
            n_antennas: 8,
            n_users: 6,
            d_l: 50.0,
            d_r: 100.0,
            rng_seed: 23,
            ..SystemConfig::default()
        }
    }

    fn sample_from(rows: Vec<Vec<Complex64>>) -> ChannelSample {
        let k = rows.len();
        let channels = rows.into_iter().map(ComplexVector::from_vec).collect();
        ChannelSample::new(channels, vec![1.0; k], vec![60.0; k]).unwrap()
    }

    #[test]
    fn mrt_normalizes_the_whitened_channel() {
        let s = sample_from(vec![
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 3.0), Complex64::new(4.0, 0.0)],
        ]);
        let w0 = mrt_beamformer(&s, 0).unwrap();
        assert!((w0[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let w1 = mrt_beamformer(&s, 1).unwrap();
        assert!((w1[0] - Complex64::new(0.0, 0.6)).norm() < 1e-15);
        assert!((w1[1] - Complex64::new(0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mmse_reduces_to_mrt_without_interference() {
        // Single user: the inverse acts on hbar's own direction only.
        let s = sample_from(vec![vec![Complex64::new(0.3, -1.1), Complex64::new(0.7, 0.2)]]);
        let mmse = mmse_beamformer(&s, &[2.5], 0).unwrap();
        let mrt = mrt_beamformer(&s, 0).unwrap();
        // Both unit vectors along the same ray.
        assert!((mmse.dot_h(&mrt).norm() - 1.0).abs() < 1e-12);

        // Zero uplink power for everyone: the inverse is the identity.
        let cfg = desk_cfg();
        let multi = &generate_dataset(&cfg, 1)[0];
        for k in 0..cfg.n_users {
            let mmse = mmse_beamformer(multi, &vec![0.0; cfg.n_users], k).unwrap();
            let mrt = mrt_beamformer(multi, k).unwrap();
            assert!((mmse.dot_h(&mrt).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mmse_maximizes_uplink_sinr_under_perturbations() {
        let cfg = SystemConfig { n_antennas: 8, n_users: 4, ..desk_cfg() };
        let s = &generate_dataset(&cfg, 1)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.5)).collect();
        let all = [0usize, 1, 2, 3];
        for k in 0..4 {
            let w_opt = mmse_beamformer(s, &q, k).unwrap();
            let base = uplink_sinr(s, &q, &w_opt, k, &all).unwrap();
            for _ in 0..100 {
                let dir = ComplexVector::from_vec(
                    (0..8)
                        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .collect(),
                )
                .normalized()
                .unwrap();
                let mut bumped = w_opt.clone();
                for i in 0..8 {
                    bumped.as_mut_slice()[i] += 0.1 * dir[i];
                }
                let bumped = bumped.normalized().unwrap();
                let got = uplink_sinr(s, &q, &bumped, k, &all).unwrap();
                assert!(got <= base + 1e-9 * base);
            }
        }
    }

    #[test]
    fn power_mappings_solve_tiny_systems_exactly() {
        // Single user: q = gamma / |hbar^H w|^2.
        let s = sample_from(vec![vec![Complex64::new(2.0, 0.0)]]);
        let w = vec![mrt_beamformer(&s, 0).unwrap()];
        let q = downlink_to_uplink_powers(&s, &w, &[1.7], &[0]).unwrap();
        assert!((q[0] - 1.7 / 4.0).abs() < 1e-15);
        let p = uplink_to_downlink_powers(&s, &w, &[1.7], &[0]).unwrap();
        assert!((p[0] - 1.7 / 4.0).abs() < 1e-15);

        // Orthogonal users decouple into scalar systems.
        let s2 = sample_from(vec![
            vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)],
        ]);
        let w2 = vec![mrt_beamformer(&s2, 0).unwrap(), mrt_beamformer(&s2, 1).unwrap()];
        let q2 = downlink_to_uplink_powers(&s2, &w2, &[3.0, 0.5], &[0, 1]).unwrap();
        assert!((q2[0] - 3.0 / 4.0).abs() < 1e-15);
        assert!((q2[1] - 0.5 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn power_mappings_round_trip_through_the_sinr_expressions() {
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for sample in &samples {
            let s = [0usize, 2, 4];
            let targets: Vec<f64> = (0..3).map(|_| rng.gen_range(0.3..2.0)).collect();
            // Any fixed unit beamformers work for the round trip; use MMSE at
            // an arbitrary power guess.
            let mut guess = vec![0.0; cfg.n_users];
            for &k in &s {
                guess[k] = rng.gen_range(0.1..1.0);
            }
            let w = mmse_beamformers(sample, &guess, &s).unwrap();

            let q = downlink_to_uplink_powers(sample, &w, &targets, &s).unwrap();
            for (i, &k) in s.iter().enumerate() {
                let got = uplink_sinr(sample, &q, &w[k], k, &s).unwrap();
                assert!((got - targets[i]).abs() < 1e-8, "uplink user {k}: {got}");
            }

            let p = uplink_to_downlink_powers(sample, &w, &targets, &s).unwrap();
            for (i, &k) in s.iter().enumerate() {
                let got = downlink_sinr(sample, &p, &w, k, &s).unwrap();
                assert!((got - targets[i]).abs() < 1e-8, "downlink user {k}: {got}");
            }

            // Same beams, same targets: both directions spend the same total.
            let (sq, sp) = (q.iter().sum::<f64>(), p.iter().sum::<f64>());
            assert!((sq - sp).abs() <= 1e-6 * sq.max(1.0), "sum q {sq} vs sum p {sp}");
        }
    }

    #[test]
    fn feasibility_single_user_closed_form() {
        let s = sample_from(vec![vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]]);
        // ||hbar||^2 = 2; target 1.6 needs p = 0.8.
        let sol = min_power_feasibility(&s, &[0], &[1.6], 1.0, 500, 1e-8).unwrap();
        assert!(sol.feasible);
        assert!((sol.p[0] - 0.8).abs() < 1e-7);
        // Budget below the closed form: infeasible.
        let tight = min_power_feasibility(&s, &[0], &[1.6], 0.5, 500, 1e-8).unwrap();
        assert!(!tight.feasible);
        assert!((tight.p[0] - 0.8).abs() < 1e-7); // required power still reported
    }

    #[test]
    fn feasibility_orthogonal_users_decouple() {
        let s = sample_from(vec![
            vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        ]);
        let sol = min_power_feasibility(&s, &[0, 1], &[2.0, 3.0], 10.0, 500, 1e-8).unwrap();
        assert!(sol.feasible);
        assert!((sol.p[0] - 2.0 / 4.0).abs() < 1e-7);
        assert!((sol.p[1] - 3.0 / 1.0).abs() < 1e-7);
    }

    #[test]
    fn feasibility_targets_are_tight_and_grid_unbeatable() {
        let cfg = SystemConfig { n_users: 3, n_antennas: 4, ..desk_cfg() };
        let sample = &generate_dataset(&cfg, 1)[0];
        let p_budget = cfg.power_budget();
        let targets = [1.633, 1.2, 0.9];
        let s = [0usize, 1, 2];
        let sol = min_power_feasibility(sample, &s, &targets, p_budget, 500, 1e-8).unwrap();
        assert!(sol.feasible);

        // Tightness through the independent downlink expression.
        for (i, &k) in s.iter().enumerate() {
            let got = downlink_sinr(sample, &sol.p, &sol.w, k, &s).unwrap();
            assert!((got - targets[i]).abs() <= 1e-6 * targets[i]);
        }
        // Duality conservation.
        let (sq, sp) = (sol.total_uplink_power(), sol.total_downlink_power());
        assert!((sq - sp).abs() <= 1e-6 * sq.max(1.0));

        // No point of a 50^3 grid beats the solution with the same beams.
        let gains: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..3).map(|l| coupling_gain(&sample.whitened(k), &sol.w[l])).collect())
            .collect();
        let best = sp;
        let lim = 1.2 * best; // grid spans a neighbourhood of the optimum
        let step = lim / 49.0;
        let mut beaten = false;
        for i in 0..50 {
            for j in 0..50 {
                for m in 0..50 {
                    let p = [i as f64 * step, j as f64 * step, m as f64 * step];
                    if p[0] + p[1] + p[2] >= best - 1e-6 {
                        continue;
                    }
                    let ok = (0..3).all(|k| {
                        let intf: f64 =
                            (0..3).filter(|&l| l != k).map(|l| p[l] * gains[k][l]).sum();
                        p[k] * gains[k][k] / (1.0 + intf) >= targets[k]
                    });
                    if ok {
                        beaten = true;
                    }
                }
            }
        }
        assert!(!beaten, "a cheaper grid point met all targets");
    }

    #[test]
    fn feasibility_monotone_in_set_and_targets() {
        let cfg = desk_cfg();
        let samples = generate_dataset(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let p_budget = cfg.power_budget();
        for sample in &samples {
            for _ in 0..4 {
                let mut pool: Vec<usize> = (0..cfg.n_users).collect();
                for i in (1..pool.len()).rev() {
                    pool.swap(i, rng.gen_range(0..=i));
                }
                let small = {
                    let mut v = pool[..2].to_vec();
                    v.sort_unstable();
                    v
                };
                let large = {
                    let mut v = pool[..3].to_vec();
                    v.sort_unstable();
                    v
                };
                let g = 1.633;
                let a = min_power_feasibility(sample, &small, &[g; 2], p_budget, 500, 1e-8)
                    .unwrap();
                let b = min_power_feasibility(sample, &large, &[g; 3], p_budget, 500, 1e-8)
                    .unwrap();
                if a.feasible && b.feasible {
                    assert!(b.total_downlink_power() >= a.total_downlink_power() - 1e-9);
                }
                // Doubling the targets can only cost more.
                let c = min_power_feasibility(sample, &small, &[2.0 * g; 2], p_budget, 500, 1e-8)
                    .unwrap();
                if a.feasible && c.feasible {
                    assert!(c.total_downlink_power() >= a.total_downlink_power() - 1e-9);
                }
            }
        }
    }

    #[test]
    fn feasibility_flags_divergence_as_infeasible() {
        // Two colinear users cannot both reach a large target: the power
        // iteration blows up and must report infeasible without erroring.
        let s = sample_from(vec![
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(1.0, 0.0), Complex64::new(1e-9, 0.0)],
        ]);
        let sol = min_power_feasibility(&s, &[0, 1], &[50.0, 50.0], 1.0, 500, 1e-8).unwrap();
        assert!(!sol.feasible);
    }

    #[test]
    fn verify_allocation_accepts_solver_output_and_flags_tampering() {
        let cfg = desk_cfg();
        let sample = &generate_dataset(&cfg, 1)[0];
        let rp = RateParams::from_config(&cfg).unwrap();
        let gamma = crate::rates::min_sinr_threshold(&rp).unwrap();
        let s = [0usize, 1];
        let sol = min_power_feasibility(sample, &s, &[gamma; 2], cfg.power_budget(), 500, 1e-8)
            .unwrap();
        assert!(sol.feasible);
        let mut alloc = Allocation::empty(cfg.n_users, cfg.n_antennas);
        for &k in &s {
            alloc.kappa[k] = 1.0;
        }
        alloc.q = sol.q.clone();
        alloc.p = sol.p.clone();
        alloc.w = sol.w.clone();
        verify_allocation(sample, &alloc, &rp, cfg.power_budget()).unwrap();

        let mut starved = alloc.clone();
        starved.p[s[0]] *= 0.5;
        assert!(verify_allocation(sample, &starved, &rp, cfg.power_budget()).is_err());

        let mut bloated = alloc;
        bloated.p[s[0]] += cfg.power_budget();
        assert!(verify_allocation(sample, &bloated, &rp, cfg.power_budget()).is_err());
    }
}
