use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsolve"))
        .args(args)
        .current_dir(dir)
        .env_remove("DUALSOLVE_THREADS")
        .output()
        .expect("spawn dualsolve")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))
}

#[test]
fn help_and_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
    assert_eq!(code(&run(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&run(d.path(), &["sample", "--nfe", "x"])), 2);
    assert_eq!(code(&run(d.path(), &["sample", "--solver", "euler"])), 2);
    assert_eq!(code(&run(d.path(), &["sample", "--mode", "p3"])), 2);
    assert_eq!(code(&run(d.path(), &["sample", "--schedule", "sqrt"])), 2);
    assert_eq!(
        code(&run(d.path(), &["sample", "--cond", "5", "--backbone", "mixture"])),
        2
    );
    assert_eq!(
        code(&run(d.path(), &["learn", "--loss", "trajectory_reg"])),
        2,
        "teacher required"
    );
    let o = Command::new(env!("CARGO_BIN_EXE_dualsolve"))
        .args(["verify"])
        .current_dir(d.path())
        .env("DUALSOLVE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failures_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["sample", "--params", "missing.json"])), 1);
    std::fs::write(d.path().join("bad.json"), "{\"format_version\": 99}").unwrap();
    let o = run(d.path(), &["plot-params", "--params", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn sample_writes_csv_and_summary() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &[
            "sample",
            "--nfe",
            "5",
            "--batch",
            "3",
            "--trajectory",
            "--schedule",
            "vp-cosine",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(d.path(), "samples.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample_id,step,t,x0");
    assert_eq!(lines.len(), 1 + 3 * 6);
    let summary: serde_json::Value = serde_json::from_str(&read(d.path(), "summary.json")).unwrap();
    assert_eq!(summary["nfe"], 5);
    assert_eq!(summary["timesteps"].as_array().unwrap().len(), 6);
    assert_eq!(summary["schedule"]["kind"], "vp-cosine");
    assert!(summary["wall_clock_secs"].as_f64().unwrap() >= 0.0);

    let o = run(
        d.path(),
        &["sample", "--solver", "dpmpp2m", "--nfe", "4", "--out", "b.csv"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(read(d.path(), "b.csv").lines().count(), 1 + 8);
}

#[test]
fn learn_interp_plot_and_sample_with_params() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    for (m, out) in [("3", "p3.json"), ("5", "p5.json")] {
        let o = run(
            p,
            &[
                "learn", "--nfe", m, "--iters", "5", "--batch", "8", "--out", out, "--trace", "t.csv",
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let trace = read(p, "t.csv");
    assert!(trace.starts_with("iteration,loss,lr"));
    assert_eq!(trace.lines().count(), 1 + 5);
    let file: serde_json::Value = serde_json::from_str(&read(p, "p3.json")).unwrap();
    assert_eq!(file["M"], 3);
    assert_eq!(file["provenance"]["loss_kind"], "hard_label");

    assert_eq!(code(&run(p, &["interp", "p5.json", "p3.json", "--nfe", "4"])), 0);
    assert_eq!(code(&run(p, &["interp", "p3.json", "p5.json", "--nfe", "6"])), 2);
    assert_eq!(code(&run(p, &["plot-params", "--params", "interp.json"])), 0);
    assert!(read(p, "params.svg").starts_with("<svg"));

    let o = run(
        p,
        &[
            "sample",
            "--params",
            "interp.json",
            "--backbone",
            "mixture",
            "--cond",
            "1",
            "--batch",
            "4",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(p, "summary.json")).unwrap();
    assert_eq!(summary["steps"], 4);
    assert_eq!(code(&run(p, &["sample", "--params", "interp.json", "--nfe", "7"])), 2);
}

#[test]
fn verify_order_and_compare_reports() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = run(p, &["verify", "--schedule", "vp-linear"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&read(p, "verify_report.json")).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["suites"].as_array().unwrap().len(), 10);

    assert_eq!(code(&run(p, &["order-check", "--svg", "o.svg"])), 0);
    let csv = read(p, "order.csv");
    assert_eq!(csv.lines().count(), 1 + 3 * 6);
    assert!(read(p, "o.svg").contains("polyline"));
    assert_eq!(code(&run(p, &["order-check", "--x-i", "1,2"])), 2);

    let o = run(
        p,
        &[
            "compare",
            "--nfe",
            "4,8",
            "--samples",
            "4",
            "--modes",
            "p1,p2c2",
            "--baselines",
            "ddim",
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = read(p, "compare.csv");
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.contains("ddim,8,"));
}
