use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbdo_core::io::file_hash;

const SMALL: &str = r#"
seed = 11
output_dir = "out"

[hull]
stations = 20
girth_points = 8

[sample]
n = 80

[model]
kind = "ppca"
k = 4

[threshold]
uniform_samples = 200
marginal_samples = 200

[optimize]
budget = 30

[[optimize.runs]]
method = "direct"
space = "full"

[[optimize.runs]]
method = "direct"
space = "latent"
anomaly = true
"#;

struct Workspace {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn workspace(text: &str) -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.toml");
    let text = text.replace("output_dir = \"out\"", &format!("output_dir = {:?}", out.to_string_lossy()));
    std::fs::write(&config, text).unwrap();
    Workspace { _tmp: tmp, config, out }
}

fn sbdo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbdo")).args(args).output().unwrap()
}

fn run(ws: &Workspace, cmd: &str, sets: &[&str]) -> Output {
    let mut args = vec![cmd, ws.config.to_str().unwrap()];
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    sbdo(&args)
}

/// Exit code and the single stderr line, which must carry an `error[...]` prefix.
fn failure(o: &Output) -> (i32, String) {
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr should be one line: {err:?}");
    assert!(lines[0].starts_with("error["), "{err}");
    (o.status.code().unwrap(), lines[0].to_string())
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).to_string()
}

#[test]
fn selftest_passes() {
    let out = stdout(&sbdo(&["selftest"]));
    assert!(out.lines().count() >= 8);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn stages_in_order_then_report() {
    let ws = workspace(SMALL);
    let s = stdout(&run(&ws, "sample", &[]));
    assert!(s.contains("accepted 80 of 80"), "{s}");
    assert!(stdout(&run(&ws, "fit", &[])).contains("K=4"));
    assert!(stdout(&run(&ws, "threshold", &[])).contains("phi_max="));
    let o = stdout(&run(&ws, "optimize", &[]));
    assert_eq!(o.lines().count(), 2, "{o}");
    let r = stdout(&run(&ws, "report", &[]));
    assert!(r.contains("direct-full") && r.contains("direct-latent-ppca-guard"), "{r}");

    let curve = std::fs::read_to_string(ws.out.join("report/direct-full.convergence.csv")).unwrap();
    assert_eq!(curve.lines().count(), 31);
    let best: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    for f in ["manifest.json", "dataset.bin", "model.bin", "threshold.json", "histogram.csv", "report/summary.csv"] {
        assert!(ws.out.join(f).exists(), "{f} missing");
    }
    assert!(!ws.out.join(".sbdo.lock").exists());
}

#[test]
fn repeated_sampling_is_byte_identical() {
    let ws = workspace(SMALL);
    stdout(&run(&ws, "sample", &[]));
    let first = file_hash(&ws.out.join("dataset.bin")).unwrap();
    stdout(&run(&ws, "sample", &[]));
    assert_eq!(first, file_hash(&ws.out.join("dataset.bin")).unwrap());
    stdout(&run(&ws, "sample", &["seed=12"]));
    assert_ne!(first, file_hash(&ws.out.join("dataset.bin")).unwrap());
}

#[test]
fn set_overrides_config_values() {
    let ws = workspace(SMALL);
    let s = stdout(&run(&ws, "sample", &["sample.n=40"]));
    assert!(s.contains("accepted 40 of 40"), "{s}");
}

#[test]
fn config_errors_exit_2_with_field() {
    let ws = workspace(&SMALL.replace("[sample]", "[sample]\ncolour = 3"));
    let (code, line) = failure(&run(&ws, "sample", &[]));
    assert_eq!(code, 2);
    assert!(line.starts_with("error[config]:") && line.contains("colour"), "{line}");

    let ws = workspace(SMALL);
    let (code, line) = failure(&run(&ws, "sample", &["sample.n=2"]));
    assert_eq!(code, 2);
    assert!(line.contains("sample.n"), "{line}");

    let (code, line) = failure(&run(&ws, "sample", &["optimize.budget=\"lots\""]));
    assert_eq!(code, 2);
    assert!(line.contains("optimize.budget"), "{line}");

    let (code, _) = failure(&run(&ws, "sample", &["nonsense"]));
    assert_eq!(code, 2);

    let (code, _) = failure(&sbdo(&["sample", "/no/such/config.toml"]));
    assert_eq!(code, 2);
}

#[test]
fn infeasible_space_exits_3() {
    let ws = workspace(SMALL);
    let (code, line) = failure(&run(
        &ws,
        "sample",
        &["sample.feasibility=\"constraints\"", "problem.tolerances.displacement=0.0"],
    ));
    assert_eq!(code, 3, "{line}");
    assert!(line.starts_with("error[infeasible]"), "{line}");
}

#[test]
fn rank_deficiency_exits_4() {
    let ws = workspace(SMALL);
    stdout(&run(&ws, "sample", &[]));
    let (code, line) = failure(&run(&ws, "fit", &["model.k=30"]));
    assert_eq!(code, 4, "{line}");
    assert!(line.starts_with("error[rank]"), "{line}");
}

#[test]
fn small_budget_exits_5() {
    let ws = workspace(SMALL);
    stdout(&run(&ws, "sample", &[]));
    stdout(&run(&ws, "fit", &[]));
    stdout(&run(&ws, "threshold", &[]));
    let (code, line) = failure(&run(
        &ws,
        "optimize",
        &["optimize.budget=5", "optimize.runs=[{method=\"bo\",space=\"latent\"}]"],
    ));
    assert_eq!(code, 5, "{line}");
    assert!(line.starts_with("error[budget]"), "{line}");
}

fn replace_recorded_hash(out: &Path, artifact: &str, old: &str) {
    let manifest = out.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let new = file_hash(&out.join(artifact)).unwrap();
    std::fs::write(&manifest, text.replace(old, &new)).unwrap();
}

#[test]
fn malformed_log_exits_6_naming_the_record() {
    let ws = workspace(SMALL);
    stdout(&run(&ws, "run", &[]));
    let log = ws.out.join("runs/direct-full.jsonl");
    let old = file_hash(&log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"iteration\": \"three\"}";
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    // a log produced elsewhere: the manifest vouches for it, the content is broken
    replace_recorded_hash(&ws.out, "runs/direct-full.jsonl", &old);
    let (code, line) = failure(&run(&ws, "report", &[]));
    assert_eq!(code, 6, "{line}");
    assert!(line.starts_with("error[malformed_log]") && line.contains("record 4"), "{line}");
}

#[test]
fn tampered_dataset_is_detected() {
    let ws = workspace(SMALL);
    stdout(&run(&ws, "sample", &[]));
    stdout(&run(&ws, "fit", &[]));
    let ds = ws.out.join("dataset.bin");
    let mut bytes = std::fs::read(&ds).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&ds, bytes).unwrap();
    let (code, line) = failure(&run(&ws, "threshold", &[]));
    assert_ne!(code, 0);
    assert!(line.starts_with("error[stale]") && line.contains("dataset.bin"), "{line}");
}

#[test]
fn out_of_order_stage_is_a_config_error() {
    let ws = workspace(SMALL);
    let (code, line) = failure(&run(&ws, "threshold", &[]));
    assert_eq!(code, 2);
    assert!(line.contains("sample"), "{line}");
}

#[test]
fn locked_directory_is_refused() {
    let ws = workspace(SMALL);
    std::fs::create_dir_all(&ws.out).unwrap();
    std::fs::write(ws.out.join(".sbdo.lock"), "1\n").unwrap();
    let (code, line) = failure(&run(&ws, "sample", &[]));
    assert_eq!(code, 1);
    assert!(line.starts_with("error[locked]"), "{line}");
}
