use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazemetrics")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_oracle_compare_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = run(
        &[
            "simulate",
            "--words",
            "60",
            "--paragraphs",
            "2",
            "--p-regress",
            "0.2",
            "--out-manifest",
            "m.json",
            "--out-log",
            "g.csv",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["oracle", "--log", "g.csv", "--manifest", "m.json", "--out", "a.csv"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(p.join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 61);

    let o = run(&["compare", "a.csv", "a.csv", "--min-rho", "1", "--max-mae", "0"], p);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().any(|l| l.starts_with("TFD") && l.contains("1.000")));

    // halve every TFD: correlation stays 1, MAE does not
    let halved: String = a
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return format!("{l}\n");
            }
            let mut f: Vec<String> = l.split(',').map(String::from).collect();
            let v: f64 = f[4].parse().unwrap();
            f[4] = format!("{:.3}", v / 2.0);
            format!("{}\n", f.join(","))
        })
        .collect();
    fs::write(p.join("b.csv"), halved).unwrap();
    let o = run(&["compare", "a.csv", "b.csv", "--max-mae", "0", "--json"], p);
    assert_eq!(code(&o), 1);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metrics"][0]["metric"], "TFD");
    assert!(v["metrics"][0]["mae"].as_f64().unwrap() > 0.0);
}

#[test]
fn input_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(&["compare", "missing.csv", "x.csv"], p)), 2);
    assert_eq!(code(&run(&["simulate", "--p-skip", "2"], p)), 2);
    assert_eq!(code(&run(&["bench", "--threshold", "-5", "--samples", "10"], p)), 2);
    fs::write(p.join("bad.toml"), "viewer_buffer = \"many\"").unwrap();
    assert_eq!(code(&run(&["bench", "--config", "bad.toml"], p)), 2);
    assert_eq!(code(&run(&["export", "--session", "nothing.jsonl"], p)), 2);
    // clap usage errors use the same code
    assert_eq!(code(&run(&["frobnicate"], p)), 2);
}

#[test]
fn bench_budget_and_config_file() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("c.toml"), "[session.ivt]\nthreshold_dps = 40.0\n").unwrap();
    let o = run(&["bench", "--config", "c.toml", "--words", "50", "--samples", "3000", "--json"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["samples"].as_u64().unwrap() >= 3000);
    assert_eq!(v["within_budget"], true);
    let o = run(&["bench", "--words", "50", "--samples", "3000", "--budget-us", "0.000001"], p);
    assert_eq!(code(&o), 1);
}
