use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn powersim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powersim")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_verified_rows_and_details() {
    let dir = tempfile::tempdir().unwrap();
    let out = powersim(&[
        "run", "--graph", "gnp:64:0.15", "--algo", "k_ruling_set", "--k", "2", "--seeds", "1..5", "--out",
        arg(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let rows = powersim::experiment::rows_from_csv(&csv).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.verdict == powersim::experiment::Verdict::Pass && r.alpha == Some(3) && r.beta == Some(4)));
    let details: Vec<powersim::experiment::Detail> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("details.json")).unwrap()).unwrap();
    assert_eq!(details.len(), 5);
    assert_eq!(details[2].config.rng_seed, 3);
}

#[test]
fn reruns_are_byte_identical() {
    let a = powersim(&["run", "--graph", "gnp:48:0.1", "--algo", "mis_gk", "--k", "2", "--seeds", "1,2,3"]);
    let b = powersim(&["run", "--graph", "gnp:48:0.1", "--algo", "mis_gk", "--k", "2", "--seeds", "1,2,3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(powersim(&["run", "--graph", "path:5", "--algo", "luby", "--k", "0"]).status.code(), Some(2));
    assert_eq!(powersim(&["run", "--graph", "/no/such/file", "--algo", "luby"]).status.code(), Some(2));
    assert_eq!(powersim(&["run", "--graph", "path:5", "--algo", "quicksort"]).status.code(), Some(2));
}

#[test]
fn aborted_runs_exit_with_one() {
    let out = powersim(&["run", "--graph", "gnp:32:0.2", "--algo", "sparsify", "--bandwidth", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.txt");
    assert!(powersim(&["generate", "--graph", "path:5", "--out", arg(&g)]).status.success());
    assert_eq!(fs::read_to_string(&g).unwrap(), "5 4\n0 1\n1 2\n2 3\n3 4\n");

    let set = dir.path().join("s.txt");
    fs::write(&set, "0\n3\n").unwrap();
    let ok = powersim(&["verify", "--graph", arg(&g), "--set", arg(&set), "--alpha", "2", "--beta", "1"]);
    assert!(ok.status.success());
    let mis = powersim(&["verify", "--graph", arg(&g), "--set", arg(&set), "--mis", "1"]);
    assert!(mis.status.success());
    let bad = powersim(&["verify", "--graph", arg(&g), "--set", arg(&set), "--mis", "3"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn verify_accepts_a_detail_record() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.txt");
    assert!(powersim(&["generate", "--graph", "gnp:40:0.1", "--seed", "4", "--out", arg(&g)]).status.success());
    let run = powersim(&["run", "--graph", arg(&g), "--algo", "awerbuch", "--k", "2", "--seeds", "4", "--out", arg(dir.path())]);
    assert!(run.status.success());
    let details = dir.path().join("details.json");
    let out = powersim(&["verify", "--graph", arg(&g), "--set", arg(&details)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweeps_emit_one_line_per_cell() {
    let out = powersim(&[
        "sweep", "--family", "gnp", "--param", "0.05", "--sizes", "64,128,256", "--ks", "1,2", "--algo", "mis_gk",
        "--seeds", "1..2",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2 + 6);

    let empty = powersim(&["sweep", "--family", "path", "--sizes", "", "--algo", "luby"]);
    assert!(empty.status.success());
    assert_eq!(String::from_utf8(empty.stdout).unwrap().lines().count(), 2);
}

#[test]
fn descriptor_files_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("exp.json");
    fs::write(&d, r#"{"graph": "cycle:12", "algorithm": "beta_ruling", "k": 1, "seeds": [7], "beta": 3}"#).unwrap();
    let out = powersim(&["run", "--descriptor", arg(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("beta_ruling"));
}
