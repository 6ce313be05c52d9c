//! Black-box tests of the command-line binary: exit codes, emitted files,
//! and cross-run determinism.

use std::path::Path;
use std::process::{Command, Output};

use mmdistill::train::RelationTrace;
use mmdistill::{ModalNet, TrainReport};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmdistill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn gen_data_writes_csv_and_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let out = run(&["gen-data", "--n", "50", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("label,"));
    assert_eq!(text.lines().count(), 51);
    assert!(String::from_utf8_lossy(&out.stdout).contains("50 samples"));
}

#[test]
fn usage_errors_exit_2() {
    // clap rejects the out-of-range flag value
    let out = run(&["gen-data", "--n", "10", "--classes", "1", "--out", "/tmp/x.csv"]);
    assert_eq!(code(&out), 2);
    // missing required flag
    let out = run(&["gen-data", "--n", "10"]);
    assert_eq!(code(&out), 2);
    // unknown subcommand
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_config_value_exits_2_and_unreadable_data_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    assert_eq!(code(&run(&["gen-data", "--n", "40", "--out", csv.to_str().unwrap()])), 0);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"temperature": 0.0}"#).unwrap();
    let out = run(&[
        "train-teacher",
        "--data",
        csv.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out-model",
        dir.path().join("m.json").to_str().unwrap(),
        "--out-report",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "train-teacher",
        "--data",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out-model",
        dir.path().join("m.json").to_str().unwrap(),
        "--out-report",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_with_unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    assert_eq!(code(&run(&["gen-data", "--n", "40", "--out", csv.to_str().unwrap()])), 0);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    let out = run(&[
        "train-teacher",
        "--data",
        csv.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out-model",
        dir.path().join("m.json").to_str().unwrap(),
        "--out-report",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn full_pipeline_emits_all_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let csv = p("d.csv");
    let cfg = p("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 3, "batch_size": 16}"#).unwrap();
    assert_eq!(
        code(&run(&[
            "gen-data", "--n", "200", "--text-dim", "5", "--image-dim", "4", "--noise", "0.1",
            "--seed", "9", "--out", &csv,
        ])),
        0
    );

    let teach = |model: &str, report: &str| {
        run(&[
            "train-teacher",
            "--data", &csv, "--config", &cfg, "--hidden-dim", "10", "--depth", "2",
            "--out-model", model, "--out-report", report,
        ])
    };
    assert_eq!(code(&teach(&p("t1.json"), &p("tr1.json"))), 0);
    assert_eq!(code(&teach(&p("t2.json"), &p("tr2.json"))), 0);
    assert_eq!(std::fs::read(p("t1.json")).unwrap(), std::fs::read(p("t2.json")).unwrap());
    assert_eq!(std::fs::read(p("tr1.json")).unwrap(), std::fs::read(p("tr2.json")).unwrap());

    let heat1 = p("heat1");
    let heat2 = p("heat2");
    let distill = |model: &str, report: &str, trace: &str, heat: &str| {
        run(&[
            "distill",
            "--data", &csv, "--teacher", &p("t1.json"), "--config", &cfg,
            "--out-model", model, "--out-report", report, "--out-trace", trace,
            "--heatmap-dir", heat,
        ])
    };
    let out = distill(&p("s1.json"), &p("sr1.json"), &p("trace1.json"), &heat1);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&distill(&p("s2.json"), &p("sr2.json"), &p("trace2.json"), &heat2)), 0);
    assert_eq!(std::fs::read(p("s1.json")).unwrap(), std::fs::read(p("s2.json")).unwrap());
    assert_eq!(std::fs::read(p("sr1.json")).unwrap(), std::fs::read(p("sr2.json")).unwrap());
    assert_eq!(std::fs::read(p("trace1.json")).unwrap(), std::fs::read(p("trace2.json")).unwrap());

    // artifacts parse back into their document types
    let student = ModalNet::from_json(&std::fs::read_to_string(p("s1.json")).unwrap()).unwrap();
    assert_eq!(student.depth, 1);
    let report = TrainReport::from_json(&std::fs::read_to_string(p("sr1.json")).unwrap()).unwrap();
    assert_eq!(report.records.len(), 3);
    assert!(report.test_accuracy.is_some());
    let trace = RelationTrace::from_json(&std::fs::read_to_string(p("trace1.json")).unwrap()).unwrap();
    assert_eq!(trace.records.len(), 3);

    // one heatmap triple per epoch, valid P5 header, identical across runs
    for epoch in 1..=3 {
        for kind in ["gt", "gs", "absdiff"] {
            let name = format!("trace_epoch{epoch}_{kind}.pgm");
            let a = std::fs::read(Path::new(&heat1).join(&name)).unwrap();
            let b = std::fs::read(Path::new(&heat2).join(&name)).unwrap();
            assert!(a.starts_with(b"P5\n96 96\n255\n"), "{name}");
            assert_eq!(a.len(), 13 + 96 * 96);
            assert_eq!(a, b, "{name}");
        }
    }
}

#[test]
fn distill_rejects_mismatched_teacher_dims() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = p("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "batch_size": 16}"#).unwrap();
    assert_eq!(code(&run(&["gen-data", "--n", "60", "--text-dim", "5", "--out", &p("a.csv")])), 0);
    assert_eq!(code(&run(&["gen-data", "--n", "60", "--text-dim", "4", "--out", &p("b.csv")])), 0);
    assert_eq!(
        code(&run(&[
            "train-teacher", "--data", &p("a.csv"), "--config", &cfg,
            "--hidden-dim", "8", "--depth", "1",
            "--out-model", &p("t.json"), "--out-report", &p("r.json"),
        ])),
        0
    );
    let out = run(&[
        "distill", "--data", &p("b.csv"), "--teacher", &p("t.json"), "--config", &cfg,
        "--out-model", &p("s.json"), "--out-report", &p("sr.json"), "--out-trace", &p("tr.json"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims"));
}

#[test]
fn compare_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = p("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 2, "batch_size": 16}"#).unwrap();
    assert_eq!(code(&run(&["gen-data", "--n", "150", "--out", &p("d.csv")])), 0);
    let out = run(&[
        "compare", "--data", &p("d.csv"), "--config", &cfg, "--seeds", "2",
        "--hidden-dim", "8", "--teacher-depth", "2", "--student-depth", "1",
        "--out", &p("table.txt"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(p("table.txt")).unwrap();
    assert!(table.contains("median"));
    assert!(table.contains("KD+MR"));
    // two seeds, two arms each, plus header and two median rows
    assert!(table.lines().filter(|l| !l.trim().is_empty()).count() >= 7);
}

#[test]
fn gradcheck_exit_codes() {
    let out = run(&["gradcheck", "--trials", "5", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let out = run(&["gradcheck", "--trials", "5", "--seed", "4", "--corrupt-backward"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let out = run(&["gradcheck", "--trials", "0"]);
    assert_eq!(code(&out), 2);
}
