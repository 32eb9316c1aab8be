use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pixstrat::harness::{Check, CheckFile};
use pixstrat::estimate::CheckStatus;
use pixstrat::lattice::{load_lattice, save_lattice, PixelLattice};

fn pixstrat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixstrat"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pixstrat(&[]).status.code(), Some(2));
    assert_eq!(pixstrat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pixstrat(&["variance", "--sampler", "xx"]).status.code(), Some(2));
    assert_eq!(pixstrat(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[variance]\nn = 0\n");
    let out = pixstrat(&["variance", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let unknown = write_config(dir.path(), "unknown.toml", "colour = 1\n");
    assert_eq!(pixstrat(&["train", "--config", s(&unknown)]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(pixstrat(&["variance", "--config", s(&missing)]).status.code(), Some(2));
    assert_eq!(
        pixstrat(&["convergence", "--jobs", "0", "--out", s(dir.path())]).status.code(),
        Some(2)
    );
}

#[test]
fn gen_data_is_long_tailed_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pixstrat(&["gen-data", "--seed", "3", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["lattice.json", "lattice.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
    }
    let lattice = load_lattice(&a.join("lattice.json")).unwrap();
    assert_eq!(lattice.dims(), &[128, 128]);
    let counts = lattice.class_counts();
    let fraction = counts[3] as f64 / lattice.len() as f64;
    assert!((0.016..=0.024).contains(&fraction), "{fraction}");

    let single = write_config(
        dir.path(),
        "k1.toml",
        "[lattice]\nsource = \"synthetic\"\ndims = [16, 16]\nnum_classes = 1\n",
    );
    let c = dir.path().join("c");
    assert_eq!(pixstrat(&["gen-data", "--config", s(&single), "--out", s(&c)]).status.code(), Some(0));
    let lattice = load_lattice(&c.join("lattice.json")).unwrap();
    assert!(lattice.classes().iter().all(|&k| k == 0));
}

fn variance_rows(csv_path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(csv_path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn column_strata_and_constant_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    // 2x2, class = column; h = 2 * column
    let lattice = PixelLattice::new(vec![2, 2], 2, vec![0, 1, 0, 1]).unwrap();
    save_lattice(&lattice, &dir.path().join("cols.json")).unwrap();
    let cfg = write_config(
        dir.path(),
        "cols.toml",
        r#"
samplers = ["ns", "sg"]
[lattice]
source = "file"
path = "cols.json"
[stratification]
scheme = "class"
[variance]
n = 2
trials = 20000
functions = [{ kind = "linear", weights = [0.0, 2.0] }, { kind = "constant", value = 1.5 }]
"#,
    );
    let out = dir.path().join("out");
    let o = pixstrat(&["variance", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rows = variance_rows(&out.join("variance.csv"));
    let linear = &rows[0];
    assert_eq!(&linear[0], "linear");
    assert_eq!(linear[3].parse::<f64>().unwrap(), 0.5);
    assert_eq!(linear[4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(&linear[11], "PASS");
    let constant = &rows[1];
    for col in 3..=6 {
        assert_eq!(constant[col].parse::<f64>().unwrap(), 0.0, "column {col}");
    }
}

#[test]
fn failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "strict.toml",
        r#"
[lattice]
source = "synthetic"
dims = [32, 32]
[stratification]
cell = [8, 8]
[variance]
n = 64
trials = 200
mean_sigmas = 1e-9
var_rel_tol = 1e-9
"#,
    );
    let out = dir.path().join("out");
    let o = pixstrat(&["variance", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("FAIL")));
    // the report over the same directory also signals the failure
    assert_eq!(pixstrat(&["report", s(&out)]).status.code(), Some(1));
}

fn write_checks(dir: &Path, file: &str, checks: Vec<Check>) {
    fs::write(
        dir.join(file),
        serde_json::to_string_pretty(&CheckFile { checks }).unwrap(),
    )
    .unwrap();
}

#[test]
fn report_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let pass = |name: &str| Check::new(name, CheckStatus::Pass, "ok");
    write_checks(dir.path(), "variance_checks.json", vec![pass("a"), pass("b")]);
    write_checks(dir.path(), "convergence_checks.json", vec![pass("c")]);
    fs::write(dir.path().join("plot_x.csv"), "a\n1\n").unwrap();
    let o = pixstrat(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 0);
    assert!(text.contains("plot_x.csv"));
    assert_eq!(fs::read_to_string(dir.path().join("report.md")).unwrap(), text);

    write_checks(
        dir.path(),
        "train_checks.json",
        vec![Check::new("injected", CheckStatus::Fail, "broken on purpose")],
    );
    let o = pixstrat(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    let fails: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(fails, vec!["FAIL injected: broken on purpose"]);

    let empty = tempfile::tempdir().unwrap();
    let o = pixstrat(&["report", s(empty.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("no results found"));

    let o = pixstrat(&["report", s(&empty.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_shape_with_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tiny.toml",
        r#"
samplers = ["ns", "sg", "sag"]
[lattice]
source = "synthetic"
dims = [32, 32]
[convergence]
runs = 1
n_anchors = 64
[convergence.stratification]
scheme = "grid"
cell = [8, 8]
[convergence.sgd]
steps = 10
checkpoints = 5
eval_anchors = 32
[convergence.sgd.probe]
anchors = 64
noise_draws = 4
"#,
    );
    let out = dir.path().join("out");
    let o = pixstrat(&["convergence", "--config", s(&cfg), "--out", s(&out)]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    for sampler in ["ns", "sg", "sag"] {
        let rows = variance_rows(&out.join(format!("trajectory_{sampler}.csv")));
        assert_eq!(rows.len(), 10, "{sampler}");
        let plot = variance_rows(&out.join(format!("plot_convergence_{sampler}.csv")));
        assert_eq!(plot.len(), 10, "{sampler}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("convergence_summary.json")).unwrap())
            .unwrap();
    assert!(summary.to_string().contains("steps_to_threshold"));
}

#[test]
fn sampler_flag_restricts_the_study() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.toml",
        "[lattice]\nsource = \"synthetic\"\ndims = [16, 16]\n[stratification]\ncell = [8, 8]\n[variance]\nn = 32\n",
    );
    let out = dir.path().join("out");
    let o = pixstrat(&[
        "variance", "--config", s(&cfg), "--out", s(&out), "--sampler", "sag", "--trials", "500",
    ]);
    assert!(matches!(o.status.code(), Some(0 | 1)));
    let sampler_rows = variance_rows(&out.join("plot_sampler_variance.csv"));
    // only the SAG rows carry Monte-Carlo numbers
    for r in &sampler_rows {
        assert_eq!(r[3].is_empty(), &r[1] != "sag", "{r:?}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("variance_report.json")).unwrap()).unwrap();
    assert_eq!(report["trials"], 500);
}
