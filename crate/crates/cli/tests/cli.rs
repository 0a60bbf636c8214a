use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn instance(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../instances")
        .join(format!("{name}.json"))
}

fn mediate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mediate")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_mechanism_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = mediate(&["solve", "--instance", s(&instance("uniform")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("t1 = 0.625"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["t1"].as_f64().unwrap() - 0.625).abs() < 1e-8);
    assert!((summary["t2"].as_f64().unwrap() - 0.75).abs() < 1e-8);
    assert_eq!(summary["pay_seller"].as_f64(), Some(0.5));
    let csv = fs::read_to_string(dir.path().join("mechanism.csv")).unwrap();
    assert!(csv.starts_with("t,lambda,R_b,P_b,U_b\n"));
    assert_eq!(csv.lines().count(), 2050);
    // The instance is echoed byte for byte.
    assert_eq!(
        fs::read(dir.path().join("instance.json")).unwrap(),
        fs::read(instance("uniform")).unwrap()
    );
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"q_dist\": ").unwrap();
    let out = mediate(&["solve", "--instance", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("parsing"));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&mediate(&["solve", "--instance", s(&missing)])), 2);
    assert_eq!(code(&mediate(&["solve", "--bogus"])), 2);
    let u = instance("uniform");
    assert_eq!(
        code(&mediate(&[
            "verify",
            "--instance",
            s(&u),
            "--grid-t",
            "1",
            "--out",
            s(dir.path())
        ])),
        2
    );
    assert_eq!(
        code(&mediate(&[
            "verify",
            "--instance",
            s(&u),
            "--tol",
            "-1",
            "--out",
            s(dir.path())
        ])),
        2
    );
}

#[test]
fn assumption_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(instance("uniform"))
        .unwrap()
        .replace("\"reserve\": 0.5", "\"reserve\": 3.0");
    let high = dir.path().join("high.json");
    fs::write(&high, text).unwrap();
    let out = mediate(&["solve", "--instance", s(&high), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("non-trivial range"), "{}", stderr(&out));

    let out = mediate(&[
        "solve",
        "--instance",
        s(&instance("decreasing_hazard")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("monotone_hazard_rate"));
}

#[test]
fn verify_accepts_solver_output_and_rejects_perturbed_payments() {
    let dir = TempDir::new().unwrap();
    let inst = instance("truncated_exponential");
    assert_eq!(
        code(&mediate(&["solve", "--instance", s(&inst), "--out", s(dir.path())])),
        0
    );
    let mech = dir.path().join("mechanism.csv");
    let out = mediate(&[
        "verify",
        "--instance",
        s(&inst),
        "--mechanism",
        s(&mech),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    // Overcharge every type by 0.05.
    let mut rdr = csv::Reader::from_path(&mech).unwrap();
    let mut w = csv::Writer::from_path(dir.path().join("perturbed.csv")).unwrap();
    w.write_record(rdr.headers().unwrap()).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        row[3] = format!("{:e}", row[3].parse::<f64>().unwrap() + 0.05);
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
    let bad = dir.path().join("perturbed.csv");
    let out = mediate(&[
        "verify",
        "--instance",
        s(&inst),
        "--mechanism",
        s(&bad),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("infeasible: ir_buyer"), "{}", stdout(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["feasible"], serde_json::Value::Bool(false));
}

#[test]
fn zero_tolerance_trips_on_rounding() {
    let dir = TempDir::new().unwrap();
    let out = mediate(&[
        "verify",
        "--instance",
        s(&instance("uniform")),
        "--tol",
        "0",
        "--grid-t",
        "51",
        "--grid-q",
        "51",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn reloaded_mechanism_gives_identical_report() {
    let dir = TempDir::new().unwrap();
    let inst_path = instance("truncated_normal");
    assert_eq!(
        code(&mediate(&[
            "solve",
            "--instance",
            s(&inst_path),
            "--out",
            s(dir.path())
        ])),
        0
    );
    let verify_into = |csv: &Path, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = mediate(&[
            "verify",
            "--instance",
            s(&inst_path),
            "--mechanism",
            s(csv),
            "--out",
            s(&out_dir),
        ]);
        assert_eq!(code(&out), 0);
        fs::read(out_dir.join("report.json")).unwrap()
    };
    let first = verify_into(&dir.path().join("mechanism.csv"), "a");

    let inst = mediation::model::ProblemInstance::from_json(&fs::read_to_string(&inst_path).unwrap()).unwrap();
    let loaded =
        mediation::io::read_mechanism_csv(fs::File::open(dir.path().join("mechanism.csv")).unwrap(), inst.reserve)
            .unwrap();
    let resaved = dir.path().join("resaved.csv");
    mediation::io::write_sampled_csv(&inst, &loaded, fs::File::create(&resaved).unwrap()).unwrap();
    assert_eq!(first, verify_into(&resaved, "b"));
}

#[test]
fn sweep_over_reserve_gives_one_verified_row_per_value() {
    let dir = TempDir::new().unwrap();
    let out = mediate(&[
        "sweep",
        "--instance",
        s(&instance("uniform")),
        "--axis",
        "reserve",
        "--from",
        "0.2",
        "--to",
        "1.4",
        "--step",
        "0.2",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    let reserves: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(reserves, ["0.2", "0.4", "0.6", "0.8", "1", "1.2", "1.4"]);
    for r in &rows {
        assert_eq!(&r[1], "ok");
        assert_eq!(&r[7], "true");
    }
}

#[test]
fn empty_sweep_exits_2() {
    let out = mediate(&[
        "sweep",
        "--instance",
        s(&instance("uniform")),
        "--axis",
        "reserve",
        "--from",
        "1.0",
        "--to",
        "0.5",
        "--step",
        "0.1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("empty"));
}

#[test]
fn grid_size_sweep_writes_convergence_csv() {
    let dir = TempDir::new().unwrap();
    let out = mediate(&[
        "sweep",
        "--instance",
        s(&instance("uniform")),
        "--axis",
        "grid-size",
        "--values",
        "4,6,8",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.starts_with("grid_size,discrete_opt,closed_form,gap\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn oracle_compare_writes_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let out = mediate(&[
        "oracle-compare",
        "--instance",
        s(&instance("uniform")),
        "--sizes",
        "4,8",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(
        report["rows"][1]["matches_pointwise_rule"],
        serde_json::Value::Bool(true)
    );
}

#[test]
fn commands_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |sub: &str, workers: &str| {
        let out_dir = dir.path().join(sub);
        let out = Command::new(env!("CARGO_BIN_EXE_mediate"))
            .env("MEDIATION_WORKERS", workers)
            .args([
                "simulate",
                "--instance",
                s(&instance("alpha_squared")),
                "--runs",
                "40000",
                "--seed",
                "5",
                "--probes",
                "4",
                "--probe-runs",
                "2000",
                "--out",
                s(&out_dir),
            ])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (
            fs::read(out_dir.join("simulation.json")).unwrap(),
            fs::read(out_dir.join("buckets.csv")).unwrap(),
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
    let sim: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(sim["max_abs_seller_surplus"].as_f64(), Some(0.0));
    assert_eq!(sim["probes"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_worker_count_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_mediate"))
        .env("MEDIATION_WORKERS", "zero")
        .args(["solve", "--instance", s(&instance("uniform"))])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
