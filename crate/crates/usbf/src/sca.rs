//! Scheduling by successive convex approximation.
//!
//! The joint scheduling/power problem is relaxed to continuous indicators
//! `kappa in [0,1]^K` with the concave penalty `lambda * sum(kappa - kappa^2)`
//! pushing them toward binary values. Each user's rate requirement becomes a
//! difference-of-convex constraint in `(kappa, q)`; linearizing its concave
//! part at the current iterate yields a convex program that is solved
//! repeatedly (the `t` loop), with MMSE beamformer refreshes in an outer
//! loop (the `tau` loop). The surrogate majorizes the true objective and
//! its constraints are conservative, so every accepted iterate stays truly
//! feasible and the true objective descends.

use crate::duality::{
    downlink_to_uplink_powers, mmse_beamformers, uplink_to_downlink_powers, verify_allocation,
    Allocation,
};
use crate::numerics::ComplexVector;
use crate::rates::{coupling_gain, min_sinr_threshold, uplink_sinr, RateParams};
use crate::system::{ChannelSample, SystemConfig};
use crate::{Error, Result};

/// Iterate of the alternating solver: the continuous scheduling point, the
/// current beamformers, loop counters, objective values, and the inner
/// solver's constraint multipliers (warm-started between rounds).
#[derive(Clone, Debug)]
pub struct ScaState {
    pub kappa: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<ComplexVector>,
    pub tau: usize,
    pub t: usize,
    /// Surrogate objective at the latest inner solution.
    pub zeta: f64,
    /// True objective at the latest outer iterate.
    pub upsilon: f64,
    pub lambda: f64,
    pub delta: f64,
    /// Augmented-Lagrangian multipliers, one per user constraint.
    pub mu_al: Vec<f64>,
}

/// One recorded inner iteration.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ScaTraceRow {
    pub tau: usize,
    pub t: usize,
    pub zeta: f64,
    pub sum_q: f64,
    pub cardinality: usize,
}

/// Convergence record: all inner objective values plus the outer sequence.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct ScaTrace {
    pub rows: Vec<ScaTraceRow>,
    pub upsilons: Vec<f64>,
}

/// Relaxed scheduling objective `-sum(kappa) + lambda * sum(kappa - kappa^2)`.
/// Exactly `-sum(kappa)` at binary points.
pub fn sca_objective(kappa: &[f64], lambda: f64) -> f64 {
    kappa.iter().map(|&x| -x + lambda * (x - x * x)).sum()
}

/// The convex program solved at one expansion point: fixed beamformer
/// couplings, the linearization constants of the concave parts, and the
/// power budget. All evaluations are closed-form in `(kappa, q)`.
#[derive(Clone, Debug)]
pub struct InnerProblem {
    /// Per-user SINR floors.
    gamma: Vec<f64>,
    /// Own-beam gains `b_k = |hbar_k^H w_k|^2`.
    b: Vec<f64>,
    /// Cross gains `a[k][l] = |hbar_l^H w_k|^2` (zero on the diagonal).
    a: Vec<Vec<f64>>,
    lambda: f64,
    kappa_exp: Vec<f64>,
    q_exp: Vec<f64>,
    /// Slope of the objective's concave part at the expansion point:
    /// `2 * lambda * (kappa_k + sum(kappa))`.
    h_slope: Vec<f64>,
    /// Value of the concave part at the expansion point.
    h_exp: f64,
    /// Constraint concave-part value at the expansion point.
    phi_exp: Vec<f64>,
    /// Its kappa-slope `gamma_k^2 * kappa_exp_k`.
    phi_kappa_slope: Vec<f64>,
    /// Its q-slopes `rho[k][l] = a[k][l] * B_k(q_exp)`.
    rho: Vec<Vec<f64>>,
    p_budget: f64,
    /// Per-user indicator ceiling, 1 unless the user has been excluded.
    kappa_cap: Vec<f64>,
    /// Per-user power ceiling: the budget, or 0 for excluded users.
    q_cap: Vec<f64>,
}

impl InnerProblem {
    /// Pin the indicator and power of every user outside `allowed` to zero.
    /// The pipeline excludes users that cannot clear their floor even alone
    /// at full power; leaving them in would let their phantom power inflate
    /// everyone else's interference for no schedulable gain. The excluded
    /// user's floor constraint is vacuous once its variables are pinned, so
    /// its data is zeroed as well: otherwise the quadratic surrogate would
    /// manufacture a residual from other users' power moves alone.
    pub fn restrict_to(&mut self, allowed: &[bool]) {
        assert_eq!(allowed.len(), self.kappa_cap.len());
        for (k, &ok) in allowed.iter().enumerate() {
            if !ok {
                self.kappa_cap[k] = 0.0;
                self.q_cap[k] = 0.0;
                self.gamma[k] = 0.0;
                self.phi_exp[k] = 0.0;
                self.phi_kappa_slope[k] = 0.0;
                for v in self.a[k].iter_mut() {
                    *v = 0.0;
                }
                for v in self.rho[k].iter_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    fn interference(&self, q: &[f64], k: usize) -> f64 {
        let row = &self.a[k];
        q.iter().zip(row).enumerate().filter(|&(l, _)| l != k).map(|(_, (&ql, &a))| ql * a).sum()
    }

    /// True relaxed objective.
    pub fn exact_objective(&self, kappa: &[f64]) -> f64 {
        sca_objective(kappa, self.lambda)
    }

    /// Convex majorizer of the objective: the concave part is replaced by
    /// its tangent at the expansion point.
    pub fn surrogate_objective(&self, kappa: &[f64]) -> f64 {
        let sum: f64 = kappa.iter().sum();
        let g = self.lambda * (sum + sum * sum);
        let mut psi = self.h_exp;
        for k in 0..kappa.len() {
            psi += self.h_slope[k] * (kappa[k] - self.kappa_exp[k]);
        }
        -sum + g - psi
    }

    /// True constraint residual; nonpositive exactly when user k's uplink
    /// SINR covers `gamma_k * kappa_k`.
    pub fn exact_constraint(&self, k: usize, kappa: &[f64], q: &[f64]) -> f64 {
        let bk = self.interference(q, k);
        self.gamma[k] * kappa[k] * (1.0 + bk) - q[k] * self.b[k]
    }

    /// Conservative convex residual: at least the true residual everywhere,
    /// equal at the expansion point.
    pub fn surrogate_constraint(&self, k: usize, kappa: &[f64], q: &[f64]) -> f64 {
        let bk = self.interference(q, k);
        let affine = self.gamma[k] * kappa[k] + bk;
        let phi = 0.5 * affine * affine;
        let mut varrho = self.phi_exp[k] + self.phi_kappa_slope[k] * (kappa[k] - self.kappa_exp[k]);
        for l in 0..q.len() {
            if l != k {
                varrho += self.rho[k][l] * (q[l] - self.q_exp[l]);
            }
        }
        self.gamma[k] * kappa[k] - q[k] * self.b[k] + phi - varrho
    }

    /// Augmented-Lagrangian value at penalty `sigma` with multipliers `alpha`.
    fn al_value(&self, kappa: &[f64], q: &[f64], alpha: &[f64], sigma: f64) -> f64 {
        let mut v = self.surrogate_objective(kappa);
        for k in 0..kappa.len() {
            let shifted = alpha[k] + sigma * self.surrogate_constraint(k, kappa, q);
            if shifted > 0.0 {
                v += (shifted * shifted - alpha[k] * alpha[k]) / (2.0 * sigma);
            } else {
                v -= alpha[k] * alpha[k] / (2.0 * sigma);
            }
        }
        v
    }

    /// Gradient of the augmented Lagrangian in `(kappa, q)`.
    fn al_gradient(
        &self,
        kappa: &[f64],
        q: &[f64],
        alpha: &[f64],
        sigma: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = kappa.len();
        let sum: f64 = kappa.iter().sum();
        let mut gk = vec![0.0; n];
        let mut gq = vec![0.0; n];
        for k in 0..n {
            gk[k] = -1.0 + self.lambda * (1.0 + 2.0 * sum) - self.h_slope[k];
        }
        for k in 0..n {
            let coef = {
                let shifted = alpha[k] + sigma * self.surrogate_constraint(k, kappa, q);
                if shifted > 0.0 {
                    shifted
                } else {
                    0.0
                }
            };
            if coef == 0.0 {
                continue;
            }
            let bk = self.interference(q, k);
            let affine = self.gamma[k] * kappa[k] + bk;
            gk[k] += coef * (self.gamma[k] + self.gamma[k] * affine - self.phi_kappa_slope[k]);
            gq[k] += coef * (-self.b[k]);
            for l in 0..n {
                if l != k {
                    gq[l] += coef * (self.a[k][l] * affine - self.rho[k][l]);
                }
            }
        }
        (gk, gq)
    }
}

/// Materialize the convex subproblem at the state's `(kappa, q)` with its
/// current beamformers. `gamma_tilde` holds the per-user SINR floors.
pub fn build_inner_problem(
    state: &ScaState,
    sample: &ChannelSample,
    gamma_tilde: &[f64],
    p_budget: f64,
) -> InnerProblem {
    let n = sample.n_users();
    let b: Vec<f64> =
        (0..n).map(|k| coupling_gain(&sample.whitened(k), &state.w[k])).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    if l == k {
                        0.0
                    } else {
                        coupling_gain(&sample.whitened(l), &state.w[k])
                    }
                })
                .collect()
        })
        .collect();
    let sum_kappa: f64 = state.kappa.iter().sum();
    let h_slope: Vec<f64> =
        state.kappa.iter().map(|&x| 2.0 * state.lambda * (x + sum_kappa)).collect();
    let h_exp = state.lambda
        * (state.kappa.iter().map(|&x| x * x).sum::<f64>() + sum_kappa * sum_kappa);
    let b_exp: Vec<f64> = (0..n)
        .map(|k| (0..n).filter(|&l| l != k).map(|l| state.q[l] * a[k][l]).sum())
        .collect();
    let phi_exp: Vec<f64> = (0..n)
        .map(|k| {
            let gk = gamma_tilde[k] * state.kappa[k];
            0.5 * (gk * gk + b_exp[k] * b_exp[k])
        })
        .collect();
    let phi_kappa_slope: Vec<f64> =
        (0..n).map(|k| gamma_tilde[k] * gamma_tilde[k] * state.kappa[k]).collect();
    let rho: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|l| if l == k { 0.0 } else { a[k][l] * b_exp[k] }).collect())
        .collect();
    InnerProblem {
        gamma: gamma_tilde.to_vec(),
        b,
        a,
        lambda: state.lambda,
        kappa_exp: state.kappa.clone(),
        q_exp: state.q.clone(),
        h_slope,
        h_exp,
        phi_exp,
        phi_kappa_slope,
        rho,
        p_budget,
        kappa_cap: vec![1.0; n],
        q_cap: vec![p_budget; n],
    }
}

fn project(kappa: &mut [f64], q: &mut [f64], problem: &InnerProblem) {
    for (x, &cap) in kappa.iter_mut().zip(&problem.kappa_cap) {
        *x = x.clamp(0.0, cap);
    }
    project_capped_simplex(q, &problem.q_cap, problem.p_budget);
}

/// Euclidean projection onto `{q : 0 <= q_i <= cap_i, sum(q) <= budget}`.
/// When the clamped point already fits the budget it is the projection;
/// otherwise the projection is `clamp(x_i - theta, 0, cap_i)` for the unique
/// shift `theta > 0` that makes the sum hit the budget, found by bisection
/// (the sum is continuous and non-increasing in `theta`).
fn project_capped_simplex(q: &mut [f64], caps: &[f64], budget: f64) {
    let clamped_sum: f64 = q.iter().zip(caps).map(|(&x, &c)| x.clamp(0.0, c)).sum();
    if clamped_sum <= budget {
        for (x, &c) in q.iter_mut().zip(caps) {
            *x = x.clamp(0.0, c);
        }
        return;
    }
    let mut lo = 0.0;
    let mut hi = q.iter().fold(0.0f64, |m, &x| m.max(x)); // sum at hi is 0 <= budget
    for _ in 0..100 {
        let theta = 0.5 * (lo + hi);
        let s: f64 = q.iter().zip(caps).map(|(&x, &c)| (x - theta).clamp(0.0, c)).sum();
        if s > budget {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let theta = 0.5 * (lo + hi);
    for (x, &c) in q.iter_mut().zip(caps) {
        *x = (*x - theta).clamp(0.0, c);
    }
}

/// Projected-gradient descent with a backtracking step on the augmented
/// Lagrangian. Returns the reached point.
fn minimize_al(
    problem: &InnerProblem,
    kappa: Vec<f64>,
    q: Vec<f64>,
    alpha: &[f64],
    sigma: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = kappa.len();
    let mut xk = kappa;
    let mut xq = q;
    project(&mut xk, &mut xq, problem);
    let mut vx = problem.al_value(&xk, &xq, alpha, sigma);
    let mut yk = xk.clone();
    let mut yq = xq.clone();
    let mut t_mom = 1.0f64;
    let mut step = 1.0 / sigma.max(1.0);

    for _ in 0..1500 {
        let (gk, gq) = problem.al_gradient(&yk, &yq, alpha, sigma);
        let vy = problem.al_value(&yk, &yq, alpha, sigma);

        // Backtrack until the quadratic upper bound at y certifies the step.
        let mut t = step;
        let mut zstep: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
        for _ in 0..60 {
            let mut kn = yk.clone();
            let mut qn = yq.clone();
            for i in 0..n {
                kn[i] -= t * gk[i];
                qn[i] -= t * gq[i];
            }
            project(&mut kn, &mut qn, problem);
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            for i in 0..n {
                let dk = kn[i] - yk[i];
                let dq = qn[i] - yq[i];
                lin += gk[i] * dk + gq[i] * dq;
                dist2 += dk * dk + dq * dq;
            }
            let vz = problem.al_value(&kn, &qn, alpha, sigma);
            if vz <= vy + lin + dist2 / (2.0 * t) + 1e-12 * vy.abs().max(1.0) {
                zstep = Some((kn, qn, vz, dist2));
                break;
            }
            t *= 0.5;
        }
        let Some((zk, zq, vz, dist2)) = zstep else { break };
        step = t * 1.3;

        if vz <= vx {
            // Accelerated step descended: accept and extrapolate.
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
            let beta = (t_mom - 1.0) / t_next;
            for i in 0..n {
                yk[i] = zk[i] + beta * (zk[i] - xk[i]);
                yq[i] = zq[i] + beta * (zq[i] - xq[i]);
            }
            let converged = dist2 <= 1e-22 && (vx - vz) <= 1e-13 * vx.abs().max(1e-12);
            xk = zk;
            xq = zq;
            vx = vz;
            t_mom = t_next;
            project(&mut yk, &mut yq, problem);
            if converged {
                break;
            }
        } else if t_mom > 1.0 {
            // Momentum overshot: restart from the incumbent.
            t_mom = 1.0;
            yk = xk.clone();
            yq = xq.clone();
        } else {
            // Plain projected step failed to improve: converged.
            break;
        }
    }
    (xk, xq)
}

/// Solve the convex subproblem from `start`, reusing multiplier estimates in
/// `alpha` across calls. Returns the solution and its surrogate objective.
/// Errs when the constraints cannot be brought within 1e-4 — the caller
/// treats that as "stay at the previous iterate".
pub fn solve_inner_warm(
    problem: &InnerProblem,
    start: (&[f64], &[f64]),
    alpha: &mut Vec<f64>,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = start.0.len();
    if alpha.len() != n {
        *alpha = vec![0.0; n];
    }
    let mut kappa = start.0.to_vec();
    let mut q = start.1.to_vec();
    project(&mut kappa, &mut q, problem);

    // Track the best near-feasible point seen, the start included: a warm
    // start from the previous expansion is itself feasible, so the returned
    // value can never exceed the surrogate at the start. That descent
    // guarantee is what makes the outer zeta sequence non-increasing.
    let feasible_enough = 1e-9;
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let consider = |kappa: &[f64], q: &[f64], best: &mut Option<(Vec<f64>, Vec<f64>, f64)>| {
        let worst =
            (0..n).map(|k| problem.surrogate_constraint(k, kappa, q)).fold(0.0f64, f64::max);
        if worst <= feasible_enough {
            let value = problem.surrogate_objective(kappa);
            if best.as_ref().map_or(true, |(_, _, v)| value < *v) {
                *best = Some((kappa.to_vec(), q.to_vec(), value));
            }
        }
        worst
    };
    consider(&kappa, &q, &mut best);

    let mut sigma = 10.0;
    let mut prev_value = f64::INFINITY;
    let mut prev_worst = f64::INFINITY;
    for _ in 0..25 {
        let (kn, qn) = minimize_al(problem, kappa.clone(), q.clone(), alpha, sigma);
        kappa = kn;
        q = qn;
        let worst = consider(&kappa, &q, &mut best);
        for k in 0..n {
            let c = problem.surrogate_constraint(k, &kappa, &q);
            alpha[k] = (alpha[k] + sigma * c).max(0.0);
        }
        let value = problem.surrogate_objective(&kappa);
        if worst <= feasible_enough
            && (value - prev_value).abs() <= tol * prev_value.abs().max(1.0)
        {
            break;
        }
        // Raise the penalty only while the multipliers are not closing the
        // residual on their own; needless stiffness just slows the minimizer.
        if worst > 0.25 * prev_worst {
            sigma = (sigma * 10.0).min(1e8);
        }
        prev_value = value;
        prev_worst = worst;
    }
    if let Some((kappa, q, zeta)) = best {
        return Ok((kappa, q, zeta));
    }
    let worst = (0..n)
        .map(|k| problem.surrogate_constraint(k, &kappa, &q))
        .fold(0.0f64, f64::max);
    if worst > 1e-4 {
        return Err(Error::InfeasibleOutput(format!(
            "inner solver left a constraint violated by {worst}"
        )));
    }
    let zeta = problem.surrogate_objective(&kappa);
    Ok((kappa, q, zeta))
}

/// [`solve_inner_warm`] with fresh multipliers.
pub fn solve_inner(
    problem: &InnerProblem,
    start: (&[f64], &[f64]),
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut alpha = vec![0.0; start.0.len()];
    solve_inner_warm(problem, start, &mut alpha, tol)
}

/// Downlink SINRs of `members` under matched-filter beams and an equal split
/// of the budget, interference restricted to the member set.
fn equal_split_sinrs(
    sample: &ChannelSample,
    w: &[ComplexVector],
    members: &[usize],
    p_budget: f64,
) -> Vec<f64> {
    let share = p_budget / members.len() as f64;
    members
        .iter()
        .map(|&k| {
            let intf: f64 = members
                .iter()
                .filter(|&&l| l != k)
                .map(|&l| share * coupling_gain(&sample.whitened(k), &w[l]))
                .sum();
            share * coupling_gain(&sample.whitened(k), &w[k]) / (1.0 + intf)
        })
        .collect()
}

/// Initial point: admit users greedily, strongest channel first, as long as
/// every admitted user still clears the floor under matched-filter beams and
/// an equal split of the budget. Admitted users start at `kappa = 1` with the
/// uplink powers reproducing their achieved SINRs; everyone else starts dark
/// and can be lifted by the solver. When no user clears the floor even alone
/// at full power, the strongest user seeds the state instead (the relaxation
/// then shuts it down and the pipeline returns an empty schedule).
fn initial_state(
    sample: &ChannelSample,
    gamma: f64,
    p_budget: f64,
    lambda: f64,
    delta: f64,
) -> Result<Option<ScaState>> {
    let n = sample.n_users();
    let energy: Vec<f64> = (0..n).map(|k| sample.whitened(k).norm_sq()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| energy[j].partial_cmp(&energy[i]).unwrap().then(i.cmp(&j)));

    let w: Vec<ComplexVector> = (0..n)
        .map(|k| sample.whitened(k).normalized())
        .collect::<Result<_>>()?;

    let mut members: Vec<usize> = Vec::new();
    for &k in &order {
        if p_budget * energy[k] < gamma {
            continue; // can't be served even alone at full power
        }
        let mut trial = members.clone();
        trial.push(k);
        if equal_split_sinrs(sample, &w, &trial, p_budget).iter().all(|&g| g >= gamma) {
            members = trial;
        }
    }
    if members.is_empty() {
        match order.first() {
            Some(&best) => members.push(best),
            None => return Ok(None),
        }
    }

    let achieved = equal_split_sinrs(sample, &w, &members, p_budget);
    let q = downlink_to_uplink_powers(sample, &w, &achieved, &members)?;
    let mut kappa = vec![0.0; n];
    for (&k, &g) in members.iter().zip(&achieved) {
        kappa[k] = (g / gamma).min(1.0);
    }
    let upsilon = sca_objective(&kappa, lambda);
    Ok(Some(ScaState {
        kappa,
        q,
        w,
        tau: 0,
        t: 0,
        zeta: upsilon,
        upsilon,
        lambda,
        delta,
        mu_al: vec![0.0; n],
    }))
}

const OUTER_CAP: usize = 50;
const INNER_CAP: usize = 200;

/// Full alternating pipeline: initialize, iterate inner convex solves to a
/// relative tolerance `delta`, refresh MMSE beamformers, and repeat until
/// the true objective stalls; then round the indicators, drop claimed users
/// the final powers cannot carry to the full floor (worst violator first),
/// and emit exact floor-hitting powers for the survivors. The returned
/// allocation always passes the feasibility audit.
pub fn sca_usbf(
    sample: &ChannelSample,
    cfg: &SystemConfig,
) -> Result<(Vec<usize>, Allocation, ScaTrace)> {
    let rp = RateParams::from_config(cfg)?;
    let gamma = min_sinr_threshold(&rp)?;
    let p_budget = cfg.power_budget();
    let n = sample.n_users();
    let gamma_tilde = vec![gamma; n];
    let admissible: Vec<bool> =
        (0..n).map(|k| p_budget * sample.whitened(k).norm_sq() >= gamma).collect();
    let mut trace = ScaTrace::default();

    let Some(mut state) = initial_state(sample, gamma, p_budget, cfg.lambda, cfg.delta)? else {
        return Ok((Vec::new(), Allocation::empty(n, sample.n_antennas()), trace));
    };
    trace.upsilons.push(state.upsilon);

    'outer: for tau in 0..OUTER_CAP {
        state.tau = tau;
        let mut zeta_prev = state.zeta;
        for t in 0..INNER_CAP {
            state.t = t;
            let mut problem = build_inner_problem(&state, sample, &gamma_tilde, p_budget);
            problem.restrict_to(&admissible);
            match solve_inner_warm(
                &problem,
                (&state.kappa, &state.q),
                &mut state.mu_al,
                state.delta,
            ) {
                Ok((kappa, q, zeta)) => {
                    state.kappa = kappa;
                    state.q = q;
                    state.zeta = zeta;
                }
                Err(Error::InfeasibleOutput(_)) => break,
                Err(e) => return Err(e),
            }
            trace.rows.push(ScaTraceRow {
                tau,
                t,
                zeta: state.zeta,
                sum_q: state.q.iter().sum(),
                cardinality: state.kappa.iter().filter(|&&x| x > 0.5).count(),
            });
            if (state.zeta - zeta_prev).abs() <= state.delta * zeta_prev.abs().max(1e-12) {
                break;
            }
            zeta_prev = state.zeta;
        }

        let users: Vec<usize> = (0..n).collect();
        state.w = mmse_beamformers(sample, &state.q, &users)?;
        let upsilon = sca_objective(&state.kappa, state.lambda);
        trace.upsilons.push(upsilon);
        let stalled =
            (upsilon - state.upsilon).abs() <= state.delta * state.upsilon.abs().max(1e-12);
        state.upsilon = upsilon;
        if stalled {
            break 'outer;
        }
    }

    let (set, alloc) = round_and_verify(sample, &state, &gamma_tilde, p_budget, &rp)?;
    Ok((set, alloc, trace))
}

/// Relative slack allowed when checking a claimed user's uplink SINR against
/// its floor: the inner solver itself only enforces constraints to ~1e-9, so
/// an exact comparison would reject users it considers served.
const VERIFY_SLACK: f64 = 1e-6;

/// Round indicators at 0.5, then verify every claimed user's uplink SINR at
/// the relaxation's final powers and beams against the full floor, dropping
/// the worst violator and re-checking until the survivors all clear it. The
/// relaxed powers only support the scaled targets `kappa_k * gamma_k`, so
/// this is what removes half-served users. The surviving set's powers are
/// re-solved exactly at the floors on both links; if even that fails the
/// audit (a near-boundary set), the member with the least margin goes too.
fn round_and_verify(
    sample: &ChannelSample,
    state: &ScaState,
    gamma_tilde: &[f64],
    p_budget: f64,
    rp: &RateParams,
) -> Result<(Vec<usize>, Allocation)> {
    let n = sample.n_users();
    let mut set: Vec<usize> = (0..n).filter(|&k| state.kappa[k] > 0.5).collect();

    loop {
        if set.is_empty() {
            return Ok((set, Allocation::empty(n, sample.n_antennas())));
        }
        let sinrs: Vec<f64> = set
            .iter()
            .map(|&k| uplink_sinr(sample, &state.q, &state.w[k], k, &set))
            .collect::<Result<_>>()?;
        let deficits: Vec<f64> =
            set.iter().zip(&sinrs).map(|(&k, &g)| (gamma_tilde[k] - g) / gamma_tilde[k]).collect();
        let worst = (0..set.len())
            .max_by(|&i, &j| deficits[i].partial_cmp(&deficits[j]).unwrap().then(set[j].cmp(&set[i])))
            .expect("set is nonempty");
        if deficits[worst] > VERIFY_SLACK {
            set.remove(worst);
            continue;
        }

        // Everyone left clears the floor at the relaxed operating point;
        // re-solve both links exactly at the floors for a clean allocation.
        let floors: Vec<f64> = set.iter().map(|&k| gamma_tilde[k]).collect();
        match build_allocation(sample, &state.w, &set, &floors, p_budget, rp) {
            Ok(Some(alloc)) => return Ok((set, alloc)),
            Ok(None) => {
                set.remove(worst); // least margin below the boundary
            }
            Err(e) => return Err(e),
        }
    }
}

/// Exact power solves at the floors for a candidate set, audited. `None`
/// means the set cannot be certified and the caller must shrink it.
fn build_allocation(
    sample: &ChannelSample,
    w: &[ComplexVector],
    set: &[usize],
    floors: &[f64],
    p_budget: f64,
    rp: &RateParams,
) -> Result<Option<Allocation>> {
    let n = sample.n_users();
    let solved = uplink_to_downlink_powers(sample, w, floors, set)
        .and_then(|p| Ok((p, downlink_to_uplink_powers(sample, w, floors, set)?)));
    let (p, q) = match solved {
        Ok(pair) => pair,
        Err(
            Error::InfeasibleOutput(_)
            | Error::SingularSystem(_)
            | Error::NumericalBreakdown(_)
            | Error::NotPositiveDefinite { .. },
        ) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut alloc = Allocation::empty(n, sample.n_antennas());
    for &k in set {
        alloc.kappa[k] = 1.0;
        alloc.w[k] = w[k].clone();
    }
    alloc.q = q;
    alloc.p = p;
    if verify_allocation(sample, &alloc, rp, p_budget).is_err() {
        return Ok(None);
    }
    Ok(Some(alloc))
}

// ---------------------------------------------------------------------------
