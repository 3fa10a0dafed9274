//! Command-line front end for the scheduling and beamforming library.
//!
//! Subcommands cover the full experiment pipeline: `gen-data` draws channel
//! datasets, `train` fits a policy network and writes a checkpoint plus an
//! epoch history, `eval` / `greedy` / `sca` / `oracle` / `compare` run
//! schedulers over a dataset and emit verified reports, and `flops` tabulates
//! the closed-form arithmetic cost model. Reports serialize to CSV or JSON
//! with identical numeric values; every run is deterministic given its seeds,
//! and `--no-timing` zeroes the runtime columns so outputs are byte-stable.
//! Any hard failure (bad arguments, unreadable files, infeasible solver
//! output) exits nonzero.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use usbf::cnn::CnnModel;
use usbf::exec::ExecMode;
use usbf::jeepon::{read_checkpoint, write_checkpoint, JeeponModel, LagrangeState, PolicyNet, SinrGradPath};
use usbf::rates::RateParams;
use usbf::report::{
    compare, flop_model, report_to_csv, report_to_json, Algorithm, Entrant, IterCounts, RunReport,
};
use usbf::system::{generate_dataset, read_dataset, write_dataset, SystemConfig};
use usbf::trainer::{train, EpochStats, TrainHyper};

#[derive(Parser)]
#[command(name = "usbf", version, about = "User scheduling and beamforming toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a channel dataset and write it with its config header.
    GenData(GenDataArgs),
    /// Train a policy network; writes a checkpoint and an epoch history.
    Train(TrainArgs),
    /// Run a checkpointed policy over a dataset.
    Eval(EvalArgs),
    /// Run the greedy scheduler over a dataset.
    Greedy(SolveArgs),
    /// Run the successive-approximation scheduler over a dataset.
    Sca(SolveArgs),
    /// Run the exhaustive-search baseline (tiny user counts only).
    Oracle(SolveArgs),
    /// Run several schedulers on one dataset and report normalized ratios.
    Compare(CompareArgs),
    /// Tabulate the closed-form arithmetic cost model.
    Flops(FlopsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Jeepon,
    Cnn,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report serialization.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Zero the runtime columns so reports are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Run solvers on a single thread.
    #[arg(long)]
    sequential: bool,
}

impl OutputArgs {
    fn mode(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::default()
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Config file (`key = value`); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the channel-generation seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of channel samples to draw.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Config file; hyperparameter keys apply here, system keys overlay the
    /// dataset header (shape keys must match).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy family to train.
    #[arg(long, value_enum, default_value_t = ModelKind::Jeepon)]
    model: ModelKind,
    /// Parameter initialization seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Epoch-history CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Policy checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Row label (defaults to the checkpoint's model kind).
    #[arg(long)]
    label: Option<String>,
    /// Config overlay for solver knobs; shape keys must match the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SolveArgs {
    /// Dataset to solve.
    #[arg(long)]
    data: PathBuf,
    /// Config overlay for solver knobs; shape keys must match the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Dataset to solve.
    #[arg(long)]
    data: PathBuf,
    /// Entrant spec: `greedy`, `sca`, `oracle`, `jeepon:<ckpt>`, `cnn:<ckpt>`,
    /// or `jeepon-transfer:<ckpt>`. Repeatable; labels must be distinct.
    #[arg(long = "algo", required = true)]
    algos: Vec<String>,
    /// Config overlay for solver knobs; shape keys must match the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct FlopsArgs {
    /// Algorithms to tabulate.
    #[arg(long = "algo", default_values_t = ["jeepon".to_string(), "sca".to_string(), "greedy".to_string()])]
    algos: Vec<String>,
    /// User counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
    k: Vec<u128>,
    /// Antenna count.
    #[arg(long, default_value_t = 32)]
    n: u128,
    /// Greedy per-subset iteration count.
    #[arg(long, default_value_t = 20)]
    i1: u128,
    /// Inner iteration count of the successive approximation.
    #[arg(long, default_value_t = 20)]
    i2: u128,
    /// Outer iteration count of the successive approximation.
    #[arg(long, default_value_t = 20)]
    i3: u128,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table serialization.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Greedy(a) => cmd_solve(a, BuiltinAlgo::Greedy),
        Command::Sca(a) => cmd_solve(a, BuiltinAlgo::Sca),
        Command::Oracle(a) => cmd_solve(a, BuiltinAlgo::Oracle),
        Command::Compare(a) => cmd_compare(a),
        Command::Flops(a) => cmd_flops(a),
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

/// A config file split into its system portion (raw lines, handed to
/// [`SystemConfig`]) and the training hyperparameters parsed here.
struct SplitConfig {
    system_text: String,
    hyper: TrainHyper,
}

/// Routes hyperparameter keys to [`TrainHyper`] and leaves everything else
/// (including unknown keys, which the system parser rejects with a precise
/// message) for [`SystemConfig::from_kv_text`].
fn split_config(text: &str) -> Result<SplitConfig> {
    fn num<T: std::str::FromStr>(key: &str, value: &str, lineno: usize) -> Result<T> {
        value.parse().map_err(|_| {
            anyhow::anyhow!("config line {lineno}: cannot parse `{value}` for key `{key}`")
        })
    }
    let mut hyper = TrainHyper::default();
    let mut system_text = String::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {lineno} is not `key = value`: `{raw}`");
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epochs" => hyper.epochs = num(key, value, lineno)?,
            "learning_rate" => hyper.lr = num(key, value, lineno)?,
            "eps_mu" => hyper.eps_mu = num(key, value, lineno)?,
            "eps_nu" => hyper.eps_nu = num(key, value, lineno)?,
            "val_fraction" => hyper.val_fraction = num(key, value, lineno)?,
            "shuffle_seed" => hyper.shuffle_seed = num(key, value, lineno)?,
            "block_size" => hyper.block_size = num(key, value, lineno)?,
            "sinr_grad" => {
                hyper.sinr_grad = match value {
                    "analytic" => SinrGradPath::Analytic,
                    "finite_difference" => SinrGradPath::FiniteDifference,
                    other => bail!(
                        "config line {lineno}: sinr_grad must be `analytic` or \
                         `finite_difference`, got `{other}`"
                    ),
                }
            }
            _ => {
                system_text.push_str(raw);
                system_text.push('\n');
            }
        }
    }
    Ok(SplitConfig { system_text, hyper })
}

/// Loads an optional config overlay on top of a dataset's header. System
/// keys in the file override the header's solver knobs, but the keys that
/// describe the stored samples themselves must not change.
fn overlay_config(
    dataset_cfg: &SystemConfig,
    config: Option<&Path>,
) -> Result<(SystemConfig, TrainHyper)> {
    let Some(path) = config else {
        return Ok((dataset_cfg.clone(), TrainHyper::default()));
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let split = split_config(&text)?;
    let merged_text = format!("{}{}", dataset_cfg.to_kv_text(), split.system_text);
    let merged = SystemConfig::from_kv_text(&merged_text)?;
    if merged.n_antennas != dataset_cfg.n_antennas
        || merged.n_users != dataset_cfg.n_users
        || merged.sigma2 != dataset_cfg.sigma2
    {
        bail!(
            "config `{}` changes the dataset's shape: stored samples have \
             n_antennas = {}, n_users = {}, sigma2 = {}",
            path.display(),
            dataset_cfg.n_antennas,
            dataset_cfg.n_users,
            dataset_cfg.sigma2
        );
    }
    Ok((merged, split.hyper))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config `{}`", path.display()))?;
            // Hyperparameter keys are legal in a shared config file; they
            // just do not affect data generation.
            let split = split_config(&text)?;
            SystemConfig::from_kv_text(&split.system_text)?
        }
        None => SystemConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    if args.count == 0 {
        bail!("--count must be at least 1");
    }
    let samples = generate_dataset(&cfg, args.count);
    write_dataset(&args.out, &cfg, &samples)?;
    eprintln!(
        "wrote {} samples (K = {}, N = {}) to {}",
        samples.len(),
        cfg.n_users,
        cfg.n_antennas,
        args.out.display()
    );
    Ok(())
}

fn history_to_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,binary_violation,sinr_violation,mu,nu\n");
    for e in history {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.train_loss, val, e.binary_violation, e.sinr_violation, e.mu, e.nu
        ));
    }
    s
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (cfg, samples) = read_dataset(&args.data)?;
    let (cfg, hyper) = overlay_config(&cfg, args.config.as_deref())?;
    let rp = RateParams::from_config(&cfg)?;
    let budget = cfg.power_budget();
    let lag0 = LagrangeState::default();

    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| history_path_for(&args.out));
    let history = match args.model {
        ModelKind::Jeepon => {
            let model = JeeponModel::new(args.seed)?;
            let outcome = train(model, &samples, &rp, budget, &hyper, lag0)?;
            let cp = outcome.model.to_checkpoint(outcome.annotations(&hyper));
            write_checkpoint(&args.out, &cp)?;
            outcome.history
        }
        ModelKind::Cnn => {
            let model = CnnModel::new(args.seed)?;
            let outcome = train(model, &samples, &rp, budget, &hyper, lag0)?;
            let cp = outcome.model.to_checkpoint(outcome.annotations(&hyper));
            write_checkpoint(&args.out, &cp)?;
            outcome.history
        }
    };
    fs::write(&history_path, history_to_csv(&history))
        .with_context(|| format!("cannot write history `{}`", history_path.display()))?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        eprintln!(
            "trained {} epochs on {} samples: loss {} -> {}, checkpoint {}",
            history.len(),
            samples.len(),
            first.train_loss,
            last.train_loss,
            args.out.display()
        );
    }
    Ok(())
}

fn history_path_for(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".history.csv");
    checkpoint.with_file_name(name)
}

/// A checkpoint loaded as whichever policy family it declares.
enum LoadedModel {
    Jeepon(JeeponModel),
    Cnn(CnnModel),
}

impl LoadedModel {
    fn load(path: &Path) -> Result<Self> {
        let cp = read_checkpoint(path)?;
        match cp.kind.as_str() {
            "jeepon" => Ok(LoadedModel::Jeepon(JeeponModel::from_checkpoint(&cp)?)),
            "cnn" => Ok(LoadedModel::Cnn(CnnModel::from_checkpoint(&cp)?)),
            other => bail!("checkpoint `{}` holds unknown model kind `{other}`", path.display()),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Jeepon(_) => "jeepon",
            LoadedModel::Cnn(_) => "cnn",
        }
    }

    fn algorithm(&self) -> Algorithm<'_> {
        match self {
            LoadedModel::Jeepon(m) => Algorithm::Jeepon(m),
            LoadedModel::Cnn(m) => Algorithm::Cnn(m),
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (cfg, samples) = read_dataset(&args.data)?;
    let (cfg, _) = overlay_config(&cfg, args.config.as_deref())?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let label = args.label.clone().unwrap_or_else(|| model.kind().to_string());
    let entrants = [model.algorithm().labeled(label)];
    let report = compare(&samples, &entrants, &cfg, args.output.mode(), !args.output.no_timing)?;
    emit_report(&report, &args.output)
}

enum BuiltinAlgo {
    Greedy,
    Sca,
    Oracle,
}

fn cmd_solve(args: SolveArgs, which: BuiltinAlgo) -> Result<()> {
    let (cfg, samples) = read_dataset(&args.data)?;
    let (cfg, _) = overlay_config(&cfg, args.config.as_deref())?;
    let algorithm = match which {
        BuiltinAlgo::Greedy => Algorithm::Greedy,
        BuiltinAlgo::Sca => Algorithm::Sca,
        BuiltinAlgo::Oracle => Algorithm::Oracle,
    };
    let entrants = [algorithm.entrant()];
    let report = compare(&samples, &entrants, &cfg, args.output.mode(), !args.output.no_timing)?;
    emit_report(&report, &args.output)
}

/// One parsed `--algo` spec: the report label plus what to run under it.
enum AlgoSpec {
    Greedy,
    Sca,
    Oracle,
    Model(LoadedModel),
}

fn parse_algo_spec(spec: &str) -> Result<(String, AlgoSpec)> {
    let (name, ckpt) = match spec.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec, None),
    };
    match name {
        "greedy" | "sca" | "oracle" => {
            if ckpt.is_some() {
                bail!("`{name}` takes no checkpoint (got `{spec}`)");
            }
            let algo = match name {
                "greedy" => AlgoSpec::Greedy,
                "sca" => AlgoSpec::Sca,
                _ => AlgoSpec::Oracle,
            };
            Ok((name.to_string(), algo))
        }
        "jeepon" | "jeepon-transfer" | "cnn" => {
            let path = ckpt.filter(|p| !p.is_empty()).with_context(|| {
                format!("`{name}` needs a checkpoint: `{name}:<checkpoint>`")
            })?;
            let model = LoadedModel::load(Path::new(path))?;
            let expected = if name == "cnn" { "cnn" } else { "jeepon" };
            if model.kind() != expected {
                bail!(
                    "`{name}` expects a {expected} checkpoint, `{path}` holds `{}`",
                    model.kind()
                );
            }
            Ok((name.to_string(), AlgoSpec::Model(model)))
        }
        other => bail!(
            "unknown algorithm `{other}` (expected greedy, sca, oracle, jeepon:<ckpt>, \
             cnn:<ckpt>, or jeepon-transfer:<ckpt>)"
        ),
    }
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let (cfg, samples) = read_dataset(&args.data)?;
    let (cfg, _) = overlay_config(&cfg, args.config.as_deref())?;
    let specs = args
        .algos
        .iter()
        .map(|s| parse_algo_spec(s))
        .collect::<Result<Vec<_>>>()?;
    let entrants: Vec<Entrant<'_>> = specs
        .iter()
        .map(|(label, spec)| {
            let algorithm = match spec {
                AlgoSpec::Greedy => Algorithm::Greedy,
                AlgoSpec::Sca => Algorithm::Sca,
                AlgoSpec::Oracle => Algorithm::Oracle,
                AlgoSpec::Model(m) => m.algorithm(),
            };
            algorithm.labeled(label.clone())
        })
        .collect();
    let report = compare(&samples, &entrants, &cfg, args.output.mode(), !args.output.no_timing)?;
    emit_report(&report, &args.output)
}

#[derive(serde::Serialize)]
struct FlopRow {
    algorithm: String,
    k: u128,
    n: u128,
    flops: u128,
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    let iters = IterCounts { i1: args.i1, i2: args.i2, i3: args.i3 };
    let mut rows = Vec::new();
    for algo in &args.algos {
        for &k in &args.k {
            let flops = flop_model(algo, k, args.n, iters, &[])?;
            rows.push(FlopRow { algorithm: algo.clone(), k, n: args.n, flops });
        }
    }
    let text = match args.format {
        Format::Csv => {
            let mut s = String::from("algorithm,k,n,flops\n");
            for r in &rows {
                s.push_str(&format!("{},{},{},{}\n", r.algorithm, r.k, r.n, r.flops));
            }
            s
        }
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            s
        }
    };
    write_text(args.out.as_deref(), &text)
}

fn emit_report(report: &RunReport, output: &OutputArgs) -> Result<()> {
    let text = match output.format {
        Format::Csv => report_to_csv(report),
        Format::Json => {
            let mut s = report_to_json(report)?;
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s
        }
    };
    write_text(output.out.as_deref(), &text)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("cannot write `{}`", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
