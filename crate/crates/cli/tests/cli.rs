use std::path::Path;
use std::process::Command;

use ftr_scatter_cli::commands::CSV_VERSION;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ftr-scatter"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small<'a>(cmd: &'a mut Command, dir: &Path) -> &'a mut Command {
    cmd.args(["--n-x", "6", "--n-y", "12", "--leaf-max-length", "0.5", "--out"]).arg(dir)
}

#[test]
fn verify_free_problem_passes() {
    let dir = tempdir("verify");
    let out = run_ok(small(&mut bin(), &dir).args(["--perturbation", "zero", "verify"]));
    assert!(out.contains("PASS free_smatrix"), "{out}");
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn verify_reports_skips_for_broken_symmetry() {
    let dir = tempdir("verify-ntr");
    // Coarse n_y may fail the residual checks; only the report content matters here.
    let out = small(&mut bin(), &dir).args(["--length", "0.5", "--perturbation", "V_NTR", "verify"]).output().unwrap();
    let out = String::from_utf8(out.stdout).unwrap();
    assert!(out.contains("SKIP skew_reflection"), "{out}");
}

#[test]
fn sweep_writes_versioned_csv_deterministically() {
    let dir = tempdir("sweep");
    let read = || {
        run_ok(small(&mut bin(), &dir).args(["sweep", "--lengths", "0.5,1"]));
        std::fs::read_to_string(dir.join("sweep.csv")).unwrap()
    };
    let first = read();
    let mut lines = first.lines();
    assert_eq!(lines.next().unwrap(), format!("# {CSV_VERSION} sweep"));
    let header = lines.next().unwrap();
    assert_eq!(header, "l,trT_plus,neg_trT_minus,sigma2pi,unitarity_residual,skew_residual,runtime_s,flag");
    assert_eq!(lines.count(), 2);
    let strip_runtime = |s: &str| -> Vec<String> {
        s.lines()
            .skip(2)
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(6);
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip_runtime(&first), strip_runtime(&read()));
}

#[test]
fn scatter_dumps_matrix() {
    let dir = tempdir("scatter");
    let out = run_ok(small(&mut bin(), &dir).args(["--length", "0.5", "scatter"]));
    assert!(out.contains("n_plus = 3"), "{out}");
    let text = std::fs::read_to_string(dir.join("smatrix.txt")).unwrap();
    assert!(text.starts_with("smatrix v1"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("smatrix.json")).unwrap()).unwrap();
    assert_eq!(json["s"].as_array().unwrap().len(), 6);
}

#[test]
fn index_reports_z2_value() {
    let out = run_ok(bin().args(["--m", "1", "--n", "1", "index", "--window", "1.6,2.0"]));
    assert!(out.contains("index2 = -1"), "{out}");
    let out = run_ok(bin().args(["--m", "2", "--n", "2", "index", "--window", "1.6,2.0"]));
    assert!(out.contains("index2 = 1"), "{out}");
}

#[test]
fn branches_and_config_file() {
    let dir = tempdir("branches");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "energy = 3.0\n[model]\nm = 1\nn = 0\np = 2\n").unwrap();
    run_ok(bin().arg("--config").arg(&cfg).arg("--out").arg(&dir).args(["branches", "--levels", "4"]));
    let csv = std::fs::read_to_string(dir.join("branches.csv")).unwrap();
    assert!(csv.starts_with(&format!("# {CSV_VERSION} branches")));
    std::fs::write(&cfg, "enrgy = 3.0\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("branches").output().unwrap();
    assert!(!out.status.success());
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("ftr-scatter-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
