//! End-to-end checks of the `usbf` binary: the full gen/train/compare
//! pipeline, determinism of its artifacts, the flop table, and hard-failure
//! exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_usbf")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary should launch")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        !out.status.success(),
        "command {:?} should have failed but printed:\n{}",
        args,
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

/// A config small enough for the whole pipeline to run in a blink: 3 users,
/// 4 antennas, a tight ring so channels are strong, and a 2-epoch fit.
const TINY_CONFIG: &str = "\
n_antennas = 4
n_users = 3
d_l = 50
d_r = 60
d_max = 200
epochs = 2
learning_rate = 0.001
val_fraction = 0.25
";

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY_CONFIG).unwrap();
    path.to_string_lossy().into_owned()
}

/// Runs gen-data, train, and compare into `dir` and returns the bytes of
/// (checkpoint, history, csv report, json report).
fn full_pipeline(dir: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
    let cfg = write_tiny_config(dir);
    let data = dir.join("data.bin");
    let ckpt = dir.join("model.ckpt");
    let csv = dir.join("report.csv");
    let json = dir.join("report.json");

    run_ok(&[
        "gen-data", "--config", &cfg, "--seed", "5", "--count", "6", "--out",
        data.to_str().unwrap(),
    ]);
    run_ok(&[
        "train", "--data", data.to_str().unwrap(), "--config", &cfg, "--seed", "3", "--out",
        ckpt.to_str().unwrap(),
    ]);
    let jeepon_spec = format!("jeepon:{}", ckpt.display());
    run_ok(&[
        "compare", "--data", data.to_str().unwrap(), "--algo", "greedy", "--algo", "sca",
        "--algo", &jeepon_spec, "--no-timing", "--format", "csv", "--out",
        csv.to_str().unwrap(),
    ]);
    run_ok(&[
        "compare", "--data", data.to_str().unwrap(), "--algo", "greedy", "--algo", "sca",
        "--algo", &jeepon_spec, "--no-timing", "--format", "json", "--out",
        json.to_str().unwrap(),
    ]);
    (
        fs::read(&ckpt).unwrap(),
        fs::read(dir.join("model.ckpt.history.csv")).unwrap(),
        fs::read(&csv).unwrap(),
        fs::read(&json).unwrap(),
    )
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (ckpt_a, hist_a, csv_a, json_a) = full_pipeline(dir_a.path());
    let (ckpt_b, hist_b, csv_b, json_b) = full_pipeline(dir_b.path());
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between reruns");
    assert_eq!(hist_a, hist_b, "histories differ between reruns");
    assert_eq!(csv_a, csv_b, "CSV reports differ between reruns");
    assert_eq!(json_a, json_b, "JSON reports differ between reruns");

    let csv = String::from_utf8(csv_a).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,algorithm,cardinality,total_power,runtime_ms,feasible"
    );
    // 6 samples x 3 entrants, all feasible, no timing.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().all(|r| r.ends_with(",0,true") || r.ends_with(",0,true\r")));
    assert!(rows.iter().any(|r| r.contains(",jeepon,")));

    let json = String::from_utf8(json_a).unwrap();
    assert!(json.contains("\"aggregates\""));
    assert!(json.contains("\"R1\""));
}

#[test]
fn eval_matches_compare_and_accepts_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data.bin");
    let ckpt = dir.path().join("model.ckpt");
    run_ok(&[
        "gen-data", "--config", &cfg, "--seed", "8", "--count", "4", "--out",
        data.to_str().unwrap(),
    ]);
    run_ok(&[
        "train", "--data", data.to_str().unwrap(), "--config", &cfg, "--out",
        ckpt.to_str().unwrap(),
    ]);

    // Stdout and --out carry the same bytes.
    let to_file = dir.path().join("eval.csv");
    let stdout = run_ok(&[
        "eval", "--data", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--no-timing",
    ])
    .stdout;
    run_ok(&[
        "eval", "--data", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--no-timing", "--out", to_file.to_str().unwrap(),
    ]);
    assert_eq!(stdout, fs::read(&to_file).unwrap());

    // A custom label flows into the rows.
    let labeled = run_ok(&[
        "eval", "--data", data.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--no-timing", "--label", "jeepon-transfer",
    ])
    .stdout;
    assert!(String::from_utf8(labeled).unwrap().contains(",jeepon-transfer,"));
}

#[test]
fn oracle_runs_at_tiny_scale_and_beats_nobody_smaller() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data.bin");
    run_ok(&[
        "gen-data", "--config", &cfg, "--seed", "2", "--count", "3", "--out",
        data.to_str().unwrap(),
    ]);
    let out = run_ok(&[
        "compare", "--data", data.to_str().unwrap(), "--algo", "greedy", "--algo", "oracle",
        "--no-timing",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let card = |label: &str| -> usize {
        csv.lines()
            .filter(|l| l.contains(&format!(",{label},")))
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum()
    };
    assert!(card("greedy") <= card("oracle"), "greedy beat exhaustive search:\n{csv}");
}

#[test]
fn flops_table_reproduces_known_points() {
    let out = run_ok(&["flops", "--algo", "greedy", "--k", "2", "--n", "1", "--i1", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "algorithm,k,n,flops\ngreedy,2,1,128\n");

    let out = run_ok(&[
        "flops", "--k", "20,50", "--n", "32", "--format", "json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6); // 3 default algorithms x 2 user counts
    let flops_of = |algo: &str, k: u64| -> u64 {
        rows.iter()
            .find(|r| r["algorithm"] == algo && r["k"] == k)
            .unwrap()["flops"]
            .as_u64()
            .unwrap()
    };
    for k in [20, 50] {
        assert!(flops_of("jeepon", k) < flops_of("sca", k));
        assert!(flops_of("sca", k) < flops_of("greedy", k));
    }
}

#[test]
fn hard_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data.bin");
    run_ok(&[
        "gen-data", "--config", &cfg, "--seed", "1", "--count", "2", "--out",
        data.to_str().unwrap(),
    ]);

    // Unknown entrant, missing checkpoint, unreadable dataset.
    run_err(&["compare", "--data", data.to_str().unwrap(), "--algo", "warp-drive"]);
    run_err(&["compare", "--data", data.to_str().unwrap(), "--algo", "jeepon"]);
    run_err(&["greedy", "--data", dir.path().join("absent.bin").to_str().unwrap()]);

    // Config that contradicts the dataset's shape.
    let clash = dir.path().join("clash.cfg");
    fs::write(&clash, "n_users = 12\n").unwrap();
    run_err(&[
        "greedy", "--data", data.to_str().unwrap(), "--config", clash.to_str().unwrap(),
    ]);

    // Unknown config key at generation time.
    let typo = dir.path().join("typo.cfg");
    fs::write(&typo, "n_userz = 3\n").unwrap();
    run_err(&[
        "gen-data", "--config", typo.to_str().unwrap(), "--out",
        dir.path().join("x.bin").to_str().unwrap(),
    ]);
}
