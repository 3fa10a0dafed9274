//! Greedy user scheduling driven by the minimum-power feasibility solver,
//! plus an exhaustive-search oracle for small populations.
//!
//! The greedy scheduler works in two stages. Stage one seeds the set with
//! the strongest user (matched-filter metric, i.e. whitened-channel norm)
//! and repeatedly admits whichever remaining candidate keeps the set
//! feasible at the smallest total required power. Stage two evicts the most
//! power-hungry scheduled user back into the candidate pool and re-runs the
//! expansion; evicting a hog sometimes frees room for two cheaper users.
//! The stages alternate until cardinality stops improving.

use crate::duality::{min_power_feasibility, Allocation, MinPowerSolution};
use crate::exec::{try_map_indexed, ExecMode};
use crate::rates::{min_sinr_threshold, RateParams};
use crate::system::{ChannelSample, SystemConfig};
use crate::{Error, Result};

/// Power-iteration budget for each feasibility solve.
pub const FIXED_POINT_MAX_ITER: usize = 500;
/// Relative-change tolerance for each feasibility solve.
pub const FIXED_POINT_TOL: f64 = 1e-8;

fn solve_set(
    sample: &ChannelSample,
    s: &[usize],
    gamma: f64,
    p_budget: f64,
) -> Result<Option<MinPowerSolution>> {
    match min_power_feasibility(
        sample,
        s,
        &vec![gamma; s.len()],
        p_budget,
        FIXED_POINT_MAX_ITER,
        FIXED_POINT_TOL,
    ) {
        Ok(sol) => Ok(if sol.feasible { Some(sol) } else { None }),
        // A solver breakdown means the set cannot be certified feasible;
        // for scheduling purposes that is the same as infeasible.
        Err(
            Error::InfeasibleOutput(_)
            | Error::SingularSystem(_)
            | Error::NumericalBreakdown(_)
            | Error::NotPositiveDefinite { .. },
        ) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Users ordered strongest-first by whitened-channel energy, ties by index.
fn norm_order(sample: &ChannelSample) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sample.n_users()).collect();
    let energy: Vec<f64> = (0..sample.n_users()).map(|k| sample.whitened(k).norm_sq()).collect();
    order.sort_by(|&a, &b| energy[b].partial_cmp(&energy[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Greedy expansion from `users` (possibly empty, then seeded with the
/// strongest individually feasible user). Returns the grown set with its
/// solution, or `(empty, None)` when not even a singleton is feasible.
fn expand(
    sample: &ChannelSample,
    mut users: Vec<usize>,
    gamma: f64,
    p_budget: f64,
    mode: ExecMode,
) -> Result<(Vec<usize>, Option<MinPowerSolution>)> {
    let mut best: MinPowerSolution;
    if users.is_empty() {
        let mut seeded = None;
        for k in norm_order(sample) {
            if let Some(sol) = solve_set(sample, &[k], gamma, p_budget)? {
                seeded = Some((k, sol));
                break;
            }
        }
        match seeded {
            Some((k, sol)) => {
                users.push(k);
                best = sol;
            }
            None => return Ok((Vec::new(), None)),
        }
    } else {
        match solve_set(sample, &users, gamma, p_budget)? {
            Some(sol) => best = sol,
            None => return Ok((users, None)),
        }
    }

    loop {
        let pool: Vec<usize> =
            (0..sample.n_users()).filter(|k| !users.contains(k)).collect();
        if pool.is_empty() {
            break;
        }
        let trials: Vec<Option<MinPowerSolution>> = try_map_indexed(mode, pool.len(), |i| {
            let mut set = users.clone();
            set.push(pool[i]);
            set.sort_unstable();
            solve_set(sample, &set, gamma, p_budget)
        })?;
        let mut pick: Option<(f64, usize, MinPowerSolution)> = None;
        for (i, trial) in trials.into_iter().enumerate() {
            if let Some(sol) = trial {
                let power = sol.total_downlink_power();
                let better = match &pick {
                    None => true,
                    Some((best_power, best_user, _)) => {
                        power < *best_power || (power == *best_power && pool[i] < *best_user)
                    }
                };
                if better {
                    pick = Some((power, pool[i], sol));
                }
            }
        }
        match pick {
            Some((_, user, sol)) => {
                users.push(user);
                users.sort_unstable();
                best = sol;
            }
            None => break,
        }
    }
    Ok((users, Some(best)))
}

fn assemble(sample: &ChannelSample, users: &[usize], sol: &MinPowerSolution) -> Allocation {
    let mut alloc = Allocation::empty(sample.n_users(), sample.n_antennas());
    for &k in users {
        alloc.kappa[k] = 1.0;
    }
    alloc.q = sol.q.clone();
    alloc.p = sol.p.clone();
    alloc.w = sol.w.clone();
    alloc
}

/// Two-stage greedy scheduler. Returns the scheduled set (ascending) and a
/// feasible allocation; an empty set with a blank allocation when no single
/// user can meet the SINR target within the power budget.
pub fn gusbf(sample: &ChannelSample, cfg: &SystemConfig) -> Result<(Vec<usize>, Allocation)> {
    gusbf_with_mode(sample, cfg, ExecMode::default())
}

/// [`gusbf`] with explicit control over candidate-sweep parallelism. The
/// result is identical in either mode; candidates are compared by required
/// power with index tie-breaks, independent of evaluation order.
pub fn gusbf_with_mode(
    sample: &ChannelSample,
    cfg: &SystemConfig,
    mode: ExecMode,
) -> Result<(Vec<usize>, Allocation)> {
    let rp = RateParams::from_config(cfg)?;
    let gamma = min_sinr_threshold(&rp)?;
    let p_budget = cfg.power_budget();

    let (users, sol) = expand(sample, Vec::new(), gamma, p_budget, mode)?;
    let Some(sol) = sol else {
        return Ok((Vec::new(), Allocation::empty(sample.n_users(), sample.n_antennas())));
    };
    let mut best = (users, sol);

    for _ in 0..sample.n_users() {
        if best.0.len() <= 1 {
            break;
        }
        // Evict the most power-hungry user (ties to the smaller index).
        let &hog = best
            .0
            .iter()
            .max_by(|&&a, &&b| best.1.p[a].partial_cmp(&best.1.p[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        let reduced: Vec<usize> = best.0.iter().copied().filter(|&k| k != hog).collect();
        let (users2, sol2) = expand(sample, reduced, gamma, p_budget, mode)?;
        let Some(sol2) = sol2 else { break };
        if users2.len() > best.0.len() {
            best = (users2, sol2);
        } else {
            if users2.len() == best.0.len()
                && sol2.total_downlink_power() < best.1.total_downlink_power()
            {
                best = (users2, sol2);
            }
            break;
        }
    }

    let alloc = assemble(sample, &best.0, &best.1);
    Ok((best.0, alloc))
}

fn for_each_combination(n: usize, c: usize, mut f: impl FnMut(&[usize])) {
    if c == 0 || c > n {
        return;
    }
    let mut idx: Vec<usize> = (0..c).collect();
    loop {
        f(&idx);
        // Advance the rightmost index that can still move.
        let mut i = c;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - c {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..c {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive baseline: the largest feasible subset, ties broken by smaller
/// required power and then by lexicographic subset order. Guarded to small
/// populations — the subset count is exponential.
pub fn exhaustive_oracle(
    sample: &ChannelSample,
    cfg: &SystemConfig,
) -> Result<(Vec<usize>, Allocation)> {
    exhaustive_oracle_with_mode(sample, cfg, ExecMode::default())
}

/// [`exhaustive_oracle`] with explicit parallelism control.
pub fn exhaustive_oracle_with_mode(
    sample: &ChannelSample,
    cfg: &SystemConfig,
    mode: ExecMode,
) -> Result<(Vec<usize>, Allocation)> {
    let k_users = sample.n_users();
    if k_users > 12 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search over {k_users} users would enumerate {} subsets",
            (1u64 << k_users) - 1
        )));
    }
    let rp = RateParams::from_config(cfg)?;
    let gamma = min_sinr_threshold(&rp)?;
    let p_budget = cfg.power_budget();

    for c in (1..=k_users).rev() {
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for_each_combination(k_users, c, |s| subsets.push(s.to_vec()));
        let solved: Vec<Option<MinPowerSolution>> =
            try_map_indexed(mode, subsets.len(), |i| solve_set(sample, &subsets[i], gamma, p_budget))?;
        let mut pick: Option<(f64, usize)> = None;
        for (i, sol) in solved.iter().enumerate() {
            if let Some(sol) = sol {
                let power = sol.total_downlink_power();
                // Subsets are enumerated lexicographically, so a strict
                // comparison keeps the lex-smallest among exact power ties.
                if pick.map_or(true, |(best, _)| power < best) {
                    pick = Some((power, i));
                }
            }
        }
        if let Some((_, i)) = pick {
            let sol = solved.into_iter().nth(i).unwrap().unwrap();
            let alloc = assemble(sample, &subsets[i], &sol);
            return Ok((subsets[i].clone(), alloc));
        }
    }
    Ok((Vec::new(), Allocation::empty(k_users, sample.n_antennas())))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::verify_allocation;
    use crate::numerics::ComplexVector;
    use crate::system::generate_dataset;
    use num_complex::Complex64;

    fn tiny_cfg() -> SystemConfig {
        SystemConfig {
            n_antennas: 4,
            n_users: 6,
            d_l: 50.0,
            d_r: 100.0,
            rng_seed: 91,
            ..SystemConfig::default()
        }
    }

    fn sample_from(rows: Vec<Vec<Complex64>>) -> ChannelSample {
        let k = rows.len();
        let channels = rows.into_iter().map(ComplexVector::from_vec).collect();
        ChannelSample::new(channels, vec![1.0; k], vec![60.0; k]).unwrap()
    }

    #[test]
    fn single_feasible_user_gets_the_closed_form_power() {
        let cfg = SystemConfig { n_users: 1, n_antennas: 2, ..tiny_cfg() };
        let s = sample_from(vec![vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)]]);
        let gamma = min_sinr_threshold(&RateParams::from_config(&cfg).unwrap()).unwrap();
        let (set, alloc) = gusbf(&s, &cfg).unwrap();
        assert_eq!(set, vec![0]);
        assert!((alloc.p[0] - gamma / 4.0).abs() < 1e-7);
        let (oset, oalloc) = exhaustive_oracle(&s, &cfg).unwrap();
        assert_eq!(oset, set);
        assert!((oalloc.p[0] - alloc.p[0]).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_users_with_ample_budget_are_all_scheduled() {
        let cfg = SystemConfig { n_users: 2, n_antennas: 2, snr_db: 20.0, ..tiny_cfg() };
        let s = sample_from(vec![
            vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.5, 0.0)],
        ]);
        let gamma = min_sinr_threshold(&RateParams::from_config(&cfg).unwrap()).unwrap();
        let (set, alloc) = gusbf(&s, &cfg).unwrap();
        assert_eq!(set, vec![0, 1]);
        assert!((alloc.p[0] - gamma / 4.0).abs() < 1e-7);
        assert!((alloc.p[1] - gamma / 2.25).abs() < 1e-7);
    }

    #[test]
    fn hopeless_instances_return_the_empty_schedule() {
        let cfg = SystemConfig { n_users: 2, n_antennas: 2, snr_db: -30.0, ..tiny_cfg() };
        let s = sample_from(vec![
            vec![Complex64::new(0.01, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(0.01, 0.0)],
        ]);
        let (set, alloc) = gusbf(&s, &cfg).unwrap();
        assert!(set.is_empty());
        assert_eq!(alloc.total_downlink_power(), 0.0);
        let (oset, _) = exhaustive_oracle(&s, &cfg).unwrap();
        assert!(oset.is_empty());
    }

    #[test]
    fn oracle_rejects_large_populations() {
        let cfg = SystemConfig { n_users: 13, ..tiny_cfg() };
        let s = &generate_dataset(&cfg, 1)[0];
        assert!(matches!(exhaustive_oracle(s, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn greedy_never_beats_the_oracle_and_both_verify() {
        let cfg = tiny_cfg();
        let rp = RateParams::from_config(&cfg).unwrap();
        let samples = generate_dataset(&cfg, 10);
        for sample in &samples {
            let (gs, galloc) = gusbf(sample, &cfg).unwrap();
            let (os, oalloc) = exhaustive_oracle(sample, &cfg).unwrap();
            assert!(gs.len() <= os.len(), "greedy {gs:?} vs oracle {os:?}");
            if !gs.is_empty() {
                verify_allocation(sample, &galloc, &rp, cfg.power_budget()).unwrap();
            }
            if !os.is_empty() {
                verify_allocation(sample, &oalloc, &rp, cfg.power_budget()).unwrap();
            }
        }
    }

    #[test]
    fn second_stage_never_loses_cardinality() {
        let cfg = tiny_cfg();
        let rp = RateParams::from_config(&cfg).unwrap();
        let gamma = min_sinr_threshold(&rp).unwrap();
        let samples = generate_dataset(&cfg, 10);
        for sample in &samples {
            let (stage1, _) =
                expand(sample, Vec::new(), gamma, cfg.power_budget(), ExecMode::Sequential)
                    .unwrap();
            let (full, _) = gusbf(sample, &cfg).unwrap();
            assert!(full.len() >= stage1.len());
        }
    }

    #[test]
    fn parallel_and_sequential_sweeps_agree_exactly() {
        let cfg = tiny_cfg();
        let samples = generate_dataset(&cfg, 6);
        for sample in &samples {
            let (s_seq, a_seq) = gusbf_with_mode(sample, &cfg, ExecMode::Sequential).unwrap();
            let (s_par, a_par) = gusbf_with_mode(sample, &cfg, ExecMode::Parallel).unwrap();
            assert_eq!(s_seq, s_par);
            assert_eq!(a_seq.p, a_par.p);
            assert_eq!(a_seq.q, a_par.q);
        }
    }

    #[test]
    fn combination_enumeration_is_lexicographic_and_complete() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[9], vec![2, 3, 4]);
        for w in seen.windows(2) {
            assert!(w[0] < w[1], "not lexicographic: {:?} then {:?}", w[0], w[1]);
        }
    }
}
