//! Comparison harness: runs schedulers over a dataset, verifies every output
//! independently, and aggregates cardinalities into normalized ratios. Also
//! hosts the closed-form arithmetic cost model used for complexity tables.
//!
//! Every allocation an algorithm emits is re-checked by the shared
//! feasibility checker, which recomputes SINRs from raw channels; a failed
//! check is a hard error (it signals an implementation bug), never a row
//! silently dropped. Ratios are quotients of mean cardinalities over the
//! identical sample set and report `None` instead of dividing by zero.

use std::time::Instant;

use crate::cnn::CnnModel;
use crate::duality::{verify_allocation, Allocation};
use crate::exec::{try_map_indexed, ExecMode};
use crate::greedy::{exhaustive_oracle, gusbf};
use crate::jeepon::{JeeponModel, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN, DEFAULT_LAYER_COUNT};
use crate::rates::RateParams;
use crate::sca::sca_usbf;
use crate::system::{ChannelSample, SystemConfig};
use crate::trainer::jusbf_infer;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Entrants
// ---------------------------------------------------------------------------

/// A scheduler the harness can run. `Oracle` is the exhaustive-search
/// baseline and is only viable at tiny user counts.
pub enum Algorithm<'a> {
    Greedy,
    Sca,
    Oracle,
    Jeepon(&'a JeeponModel),
    Cnn(&'a CnnModel),
}

impl<'a> Algorithm<'a> {
    pub fn default_label(&self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Sca => "sca",
            Algorithm::Oracle => "oracle",
            Algorithm::Jeepon(_) => "jeepon",
            Algorithm::Cnn(_) => "cnn",
        }
    }

    pub fn entrant(self) -> Entrant<'a> {
        let label = self.default_label().to_string();
        Entrant { label, algorithm: self }
    }

    /// Entrant under a custom label, e.g. `jeepon-transfer` for a model
    /// evaluated off its training distribution.
    pub fn labeled(self, label: impl Into<String>) -> Entrant<'a> {
        Entrant { label: label.into(), algorithm: self }
    }
}

/// An algorithm plus the label its rows carry in the report.
pub struct Entrant<'a> {
    pub label: String,
    pub algorithm: Algorithm<'a>,
}

fn run_algorithm(
    algorithm: &Algorithm<'_>,
    sample: &ChannelSample,
    cfg: &SystemConfig,
    rp: &RateParams,
) -> Result<Allocation> {
    match algorithm {
        Algorithm::Greedy => gusbf(sample, cfg).map(|(_, alloc)| alloc),
        Algorithm::Sca => sca_usbf(sample, cfg).map(|(_, alloc, _)| alloc),
        Algorithm::Oracle => exhaustive_oracle(sample, cfg).map(|(_, alloc)| alloc),
        Algorithm::Jeepon(model) => {
            jusbf_infer(*model, sample, rp, cfg.power_budget(), 0.0)
        }
        Algorithm::Cnn(model) => jusbf_infer(*model, sample, rp, cfg.power_budget(), 0.0),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One algorithm on one sample. `feasible` records that the allocation
/// passed the independent checker — a failure aborts the whole run, so
/// emitted rows always hold `true`; the column keeps reports self-describing.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub algorithm: String,
    pub cardinality: usize,
    pub total_power: f64,
    pub runtime_ms: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub samples: usize,
    pub mean_cardinality: f64,
    pub mean_power: f64,
    pub mean_runtime_ms: f64,
}

/// A normalized comparison `mean |S_numerator| / mean |S_denominator|`;
/// `None` marks an undefined quotient (denominator scheduled no one).
#[derive(Clone, Debug, serde::Serialize)]
pub struct RatioRow {
    pub name: String,
    pub numerator: String,
    pub denominator: String,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct RunReport {
    pub rows: Vec<SampleRow>,
    pub aggregates: Vec<Aggregate>,
    pub ratios: Vec<RatioRow>,
}

impl RunReport {
    pub fn aggregate(&self, label: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.algorithm == label)
    }

    /// Quotient of mean cardinalities between two labels, `None` when either
    /// label is absent or the denominator mean is zero.
    pub fn ratio_between(&self, numerator: &str, denominator: &str) -> Option<f64> {
        let num = self.aggregate(numerator)?.mean_cardinality;
        let den = self.aggregate(denominator)?.mean_cardinality;
        (den > 0.0).then(|| num / den)
    }

    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.ratios.iter().find(|r| r.name == name).and_then(|r| r.value)
    }
}

/// The standard normalized metrics, emitted when both labels are present.
const STANDARD_RATIOS: [(&str, &str, &str); 4] = [
    ("R1", "sca", "greedy"),
    ("R2", "jeepon", "greedy"),
    ("R3", "cnn", "jeepon"),
    ("R4", "jeepon-transfer", "greedy"),
];

/// Runs every entrant on every sample, verifying each allocation against the
/// independent checker (failure is a hard error). Rows are ordered by sample
/// index, then entrant order, regardless of scheduling. With `with_timing`
/// off, `runtime_ms` is 0 so artifacts are byte-stable across machines.
pub fn compare(
    samples: &[ChannelSample],
    entrants: &[Entrant<'_>],
    cfg: &SystemConfig,
    mode: ExecMode,
    with_timing: bool,
) -> Result<RunReport> {
    if entrants.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one entrant".into()));
    }
    for (i, e) in entrants.iter().enumerate() {
        if entrants[..i].iter().any(|other| other.label == e.label) {
            return Err(Error::InvalidArgument(format!(
                "duplicate entrant label `{}`",
                e.label
            )));
        }
    }
    let rp = RateParams::from_config(cfg)?;

    let per_sample = try_map_indexed(mode, samples.len(), |i| -> Result<Vec<SampleRow>> {
        let sample = &samples[i];
        let mut rows = Vec::with_capacity(entrants.len());
        for e in entrants {
            let t0 = Instant::now();
            let alloc = run_algorithm(&e.algorithm, sample, cfg, &rp).map_err(|err| {
                Error::InfeasibleOutput(format!("{} failed on sample {i}: {err}", e.label))
            })?;
            let runtime_ms =
                if with_timing { t0.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            verify_allocation(sample, &alloc, &rp, cfg.power_budget()).map_err(|err| {
                Error::InfeasibleOutput(format!(
                    "{} emitted an infeasible allocation on sample {i}: {err}",
                    e.label
                ))
            })?;
            rows.push(SampleRow {
                sample_id: i,
                algorithm: e.label.clone(),
                cardinality: alloc.scheduled().len(),
                total_power: alloc.total_downlink_power(),
                runtime_ms,
                feasible: true,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<SampleRow> = per_sample.into_iter().flatten().collect();

    let mut aggregates = Vec::with_capacity(entrants.len());
    for e in entrants {
        let mine: Vec<&SampleRow> = rows.iter().filter(|r| r.algorithm == e.label).collect();
        let n = mine.len().max(1) as f64;
        aggregates.push(Aggregate {
            algorithm: e.label.clone(),
            samples: mine.len(),
            mean_cardinality: mine.iter().map(|r| r.cardinality as f64).sum::<f64>() / n,
            mean_power: mine.iter().map(|r| r.total_power).sum::<f64>() / n,
            mean_runtime_ms: mine.iter().map(|r| r.runtime_ms).sum::<f64>() / n,
        });
    }

    let mut report = RunReport { rows, aggregates, ratios: Vec::new() };
    for (name, num, den) in STANDARD_RATIOS {
        let both_present = report.aggregate(num).is_some() && report.aggregate(den).is_some();
        if both_present {
            report.ratios.push(RatioRow {
                name: name.to_string(),
                numerator: num.to_string(),
                denominator: den.to_string(),
                value: report.ratio_between(num, den),
            });
        }
    }
    Ok(report)
}

/// Per-sample rows as CSV. Floats use the shortest round-trip form, the same
/// values the JSON serialization carries.
pub fn report_to_csv(report: &RunReport) -> String {
    let mut out = String::from("sample_id,algorithm,cardinality,total_power,runtime_ms,feasible\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sample_id, r.algorithm, r.cardinality, r.total_power, r.runtime_ms, r.feasible
        ));
    }
    out
}

/// Full report (rows, aggregates, ratios) as pretty JSON.
pub fn report_to_json(report: &RunReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("report serialization failed: {e}")))
}

// ---------------------------------------------------------------------------
// Arithmetic cost model
// ---------------------------------------------------------------------------

/// Outer/inner iteration counts for the cost model. The published closed
/// forms keep them symbolic; tables default to 20 everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterCounts {
    pub i1: u128,
    pub i2: u128,
    pub i3: u128,
}

impl Default for IterCounts {
    fn default() -> Self {
        Self { i1: 20, i2: 20, i3: 20 }
    }
}

fn check_positive(k: u128, n: u128, iters: &[u128]) -> Result<()> {
    if k == 0 || n == 0 || iters.iter().any(|&i| i == 0) {
        return Err(Error::InvalidArgument(
            "cost model arguments must be positive".into(),
        ));
    }
    Ok(())
}

/// Greedy search cost: `sum_{kh=2}^{K} 4(K-kh+1)(I1(kh^3 N + 5 kh^2 N) + kh^2)`.
pub fn greedy_flops(k: u128, n: u128, i1: u128) -> Result<u128> {
    check_positive(k, n, &[i1])?;
    let mut total: u128 = 0;
    for kh in 2..=k {
        let inner = i1 * (kh.pow(3) * n + 5 * kh.pow(2) * n) + kh.pow(2);
        total += 4 * (k - kh + 1) * inner;
    }
    Ok(total)
}

/// Convex-approximation cost:
/// `4 I3 (I2 (7 K^2 N + 4 K N + 14 K^2) + K (N^3 + 2 N^2 + 2 N))`.
pub fn sca_flops(k: u128, n: u128, i2: u128, i3: u128) -> Result<u128> {
    check_positive(k, n, &[i2, i3])?;
    let per_outer = i2 * (7 * k * k * n + 4 * k * n + 14 * k * k)
        + k * (n.pow(3) + 2 * n.pow(2) + 2 * n);
    Ok(4 * i3 * per_outer)
}

/// Learned-scheduler inference cost over the given dimension chains:
/// `2 (2 K^2 N + 2 K N^2 + K sum_l sum_i (2 + h_{l,i-1}) h_{l,i})`.
pub fn gnn_flops(k: u128, n: u128, chains: &[Vec<usize>]) -> Result<u128> {
    check_positive(k, n, &[])?;
    if chains.is_empty()
        || chains.iter().any(|c| c.len() < 2 || c.iter().any(|&d| d == 0))
    {
        return Err(Error::InvalidArgument(
            "each dimension chain needs at least two nonzero entries".into(),
        ));
    }
    let mut stack_sum: u128 = 0;
    for chain in chains {
        for pair in chain.windows(2) {
            stack_sum += (2 + pair[0] as u128) * pair[1] as u128;
        }
    }
    Ok(2 * (2 * k * k * n + 2 * k * n * n + k * stack_sum))
}

/// The published graph-network architecture's chains, for cost tables.
pub fn default_gnn_chains() -> Vec<Vec<usize>> {
    let m = DEFAULT_EMBEDDING_DIM;
    let mut message = vec![4];
    message.extend_from_slice(&DEFAULT_HIDDEN);
    message.push(m);
    let mut update = vec![3 + 2 * m];
    update.extend_from_slice(&DEFAULT_HIDDEN);
    update.push(3);
    let mut chains = Vec::new();
    for _ in 0..DEFAULT_LAYER_COUNT {
        chains.push(message.clone());
    }
    for _ in 0..DEFAULT_LAYER_COUNT {
        chains.push(update.clone());
    }
    chains
}

/// The baseline convolutional architecture's chain, for cost tables.
pub fn default_cnn_chains() -> Vec<Vec<usize>> {
    let mut chain = vec![crate::cnn::CNN_IN_DIM];
    chain.extend_from_slice(&crate::cnn::DEFAULT_CNN_HIDDEN);
    chain.push(crate::cnn::CNN_OUT_DIM);
    vec![chain]
}

/// String-keyed dispatcher used by the command line. `jeepon` and `cnn`
/// share the chain-driven form; `chains` may be empty to use each model
/// family's default architecture.
pub fn flop_model(
    algorithm: &str,
    k: u128,
    n: u128,
    iters: IterCounts,
    chains: &[Vec<usize>],
) -> Result<u128> {
    match algorithm {
        "greedy" => greedy_flops(k, n, iters.i1),
        "sca" => sca_flops(k, n, iters.i2, iters.i3),
        "jeepon" => {
            if chains.is_empty() {
                gnn_flops(k, n, &default_gnn_chains())
            } else {
                gnn_flops(k, n, chains)
            }
        }
        "cnn" => {
            if chains.is_empty() {
                gnn_flops(k, n, &default_cnn_chains())
            } else {
                gnn_flops(k, n, chains)
            }
        }
        other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
    }
}
