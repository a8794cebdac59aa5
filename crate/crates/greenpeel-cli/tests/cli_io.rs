//! Binary-level checks: exit codes, summaries, dataset and report files.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_greenpeel"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn small_config(out_dir: &Path) -> String {
    format!(
        r#"{{
    "problem": {{"d": 1, "n": 64, "coefficient": "identity"}},
    "hierarchy": {{"levels": 3}},
    "sampling": {{"kernel": "white", "master_seed": 5, "dataset_size": 8}},
    "algorithm": {{"rank": 2, "near_field": "dense_probe"}},
    "evaluation": {{"dense_oracle": true, "test_set_size": 4}},
    "output": {{"dir": "{}"}}
}}"#,
        out_dir.display()
    )
}

#[test]
fn check_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["check"]).current_dir(dir.path()).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[PASS] poisson_1d_quadratic"));
    assert!(text.contains("[PASS] cg_3d_residual"));
    let summary = std::fs::read_to_string(dir.path().join("out/check.summary.json")).unwrap();
    assert!(summary.contains("\"pass\": true"));
}

#[test]
fn divisibility_violation_exits_one_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_config(dir.path()).replace("\"n\": 64", "\"n\": 6").replace("\"levels\": 3", "\"levels\": 2");
    let cfg = write_config(dir.path(), "bad.json", &body);
    let out = bin().args(["learn", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hierarchy.levels") && stderr.contains("divisible"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_config(dir.path()).replace("\"rank\": 2", "\"rank\": 2, \"oops\": true");
    let cfg = write_config(dir.path(), "bad.json", &body);
    let out = bin().args(["learn", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oops"));
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_config(dir.path()).replace(
        "\"algorithm\": {\"rank\": 2, \"near_field\": \"dense_probe\"}",
        "\"algorithm\": {\"rank\": 2, \"mode\": \"dataset\", \"dataset_path\": \"nope.gpde\"}",
    );
    let cfg = write_config(dir.path(), "cfg.json", &body);
    let out = bin().args(["learn", "--config"]).arg(&cfg).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sample_then_replay_learn_matches_active() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), "cfg.json", &small_config(&out_dir));

    // active evaluate writes a summary with errors
    let out = bin().args(["evaluate", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("evaluate.summary.json")).unwrap())
            .unwrap();
    // rank-1 exactness regime: rank 2 with dense near field on 1d Poisson
    let err = summary["err_hs_rel"].as_f64().unwrap();
    assert!(err <= 1e-8, "evaluate fixture error {err:.3e}");
    assert_eq!(summary["mode"], "active");

    // sample a dataset and check the file exists with its sidecar
    let out = bin().args(["sample", "--config"]).arg(&cfg).arg("--budget").arg("6").output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let ds = out_dir.join("train.gpde");
    assert!(ds.exists());
    assert!(out_dir.join("train.gpde.meta.json").exists());
    let bytes = std::fs::read(&ds).unwrap();
    assert_eq!(bytes.len(), 24 + 2 * 6 * 64 * 8);
}

#[test]
fn sweep_writes_csv_svg_and_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("w1");
    let out8 = dir.path().join("w8");
    let body = format!(
        r#"{{
    "problem": {{"d": 1, "n": 64, "coefficient": "identity"}},
    "hierarchy": {{"levels": 3}},
    "sampling": {{"kernel": "white", "master_seed": 5}},
    "algorithm": {{"rank": 1}},
    "evaluation": {{"dense_oracle": true, "test_set_size": 4}},
    "output": {{"dir": "{}"}},
    "sweep": {{"budgets": [1, 2], "seeds": [1, 2]}}
}}"#,
        out1.display()
    );
    let cfg = write_config(dir.path(), "sweep.json", &body);

    let run = |out: &Path, workers: &str| {
        let o = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(["--workers", workers])
            .output()
            .unwrap();
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&out1, "1");
    run(&out8, "8");

    let strip_wall_time = |text: &str| -> Vec<String> {
        text.lines()
            .map(|line| {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() == 10 && fields[8] != "wall_time" {
                    let mut f = fields;
                    f[8] = "-";
                    f.join(",")
                } else {
                    line.to_string()
                }
            })
            .collect()
    };
    let csv1 = std::fs::read_to_string(out1.join("sweep.csv")).unwrap();
    let csv8 = std::fs::read_to_string(out8.join("sweep.csv")).unwrap();
    assert_eq!(strip_wall_time(&csv1), strip_wall_time(&csv8));
    assert!(csv1.starts_with("N_train,budget,L,err_hs_rel,err_op_rel,sampled_err,gamma_hat,seed,wall_time,note"));
    assert!(out1.join("sweep.svg").exists());

    // report over the produced csv
    let o = bin()
        .args(["report", "--csv"])
        .arg(out1.join("sweep.csv"))
        .arg("--out")
        .arg(dir.path().join("rep"))
        .output()
        .unwrap();
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(dir.path().join("rep/report.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("budget"), "{table}");
}

#[test]
fn golden_csv_header() {
    // schema stability: column names and order are frozen
    let golden = "N_train,budget,L,err_hs_rel,err_op_rel,sampled_err,gamma_hat,seed,wall_time,note";
    assert_eq!(greenpeel_cli::report::CSV_COLUMNS.join(","), golden);
}
