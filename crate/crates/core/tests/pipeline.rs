mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use common::repo_path;
use triage_core::pipeline::{file_sha256, run_all, Manifest, PipelineConfig, MANIFEST_FILE};
use triage_core::TriageError;

fn smoke() -> PipelineConfig {
    PipelineConfig::load(&repo_path("configs/smoke.toml")).unwrap()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeSet<String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(root, root, &mut out);
    out
}

fn csv_rows(path: PathBuf) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn smoke_run_is_complete_and_deterministic() {
    let cfg = smoke();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run_all(&cfg, &a).unwrap();
    let second = run_all(&cfg, &b).unwrap();
    assert_eq!(first.manifest.hash(), second.manifest.hash());
    assert_eq!(first.manifest.status, "ok");
    assert!(first.manifest.artifacts.len() >= 6);

    let on_disk = files_under(&a);
    let listed: BTreeSet<String> = first.manifest.artifacts.iter().map(|e| e.path.clone()).collect();
    let mut expected = on_disk.clone();
    expected.remove(MANIFEST_FILE);
    assert_eq!(listed, expected);
    for e in &first.manifest.artifacts {
        assert_eq!(file_sha256(&a.join(&e.path)).unwrap(), e.sha256, "{}", e.path);
    }
    let saved: Manifest = serde_json::from_str(&std::fs::read_to_string(&first.manifest_path).unwrap()).unwrap();
    assert_eq!(saved, first.manifest);
    for required in [
        "store/cases.csv",
        "evaluation/weekly_metrics.csv",
        "prescription/counts.csv",
        "rct/ledger.csv",
        "rct/outcomes.csv",
        "tables/table1_best_models.csv",
        "tables/table2_prescribed.csv",
        "tables/appendix_b_thresholds.csv",
    ] {
        assert!(listed.contains(required), "{required}");
    }
}

#[test]
fn report_tables_agree_with_weekly_flag_counts() {
    let dir = tempfile::tempdir().unwrap();
    run_all(&smoke(), dir.path()).unwrap();
    let counts = csv_rows(dir.path().join("prescription/counts.csv"));
    let mean_for = |model: &str, rule: &str| {
        let v: Vec<f64> = counts
            .iter()
            .filter(|r| r["model"] == model && r["rule"] == rule)
            .map(|r| r["flagged"].parse::<f64>().unwrap())
            .collect();
        assert!(!v.is_empty());
        v.iter().sum::<f64>() / v.len() as f64
    };
    let table2 = csv_rows(dir.path().join("tables/table2_prescribed.csv"));
    assert!(!table2.is_empty());
    for row in &table2 {
        let m = mean_for(&row["model"], "mean");
        assert!((row["mean_flagged"].parse::<f64>().unwrap() - m).abs() < 1e-9);
    }
    for row in csv_rows(dir.path().join("tables/appendix_b_thresholds.csv")) {
        for (col, rule) in [("t_max", "max"), ("t_mean", "mean"), ("t_min", "min")] {
            let got: f64 = row[col].parse().unwrap();
            assert!((got - mean_for(&row["model"], rule)).abs() < 1e-9);
        }
        let (tmax, tmean, tmin): (f64, f64, f64) =
            (row["t_max"].parse().unwrap(), row["t_mean"].parse().unwrap(), row["t_min"].parse().unwrap());
        assert!(tmax <= tmean && tmean <= tmin);
    }
}

#[test]
fn missing_penalty_table_is_reported_before_any_work() {
    let mut cfg = smoke();
    cfg.prescription.penalties = PathBuf::from("/nonexistent/penalties.csv");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    match run_all(&cfg, &out) {
        Err(TriageError::MissingPath(p)) => assert_eq!(p, cfg.prescription.penalties),
        other => panic!("expected a missing-path error, got {other:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn stage_failure_still_writes_a_manifest() {
    let mut cfg = smoke();
    cfg.plan.prediction_dates = vec![triage_core::Day::from_ymd(2022, 12, 1)];
    let dir = tempfile::tempdir().unwrap();
    let err = run_all(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, TriageError::Config(_)));
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.status, "failed");
    assert_eq!(manifest.failed_stage.as_deref(), Some("evaluate"));
    assert!(manifest.artifacts.iter().any(|a| a.path == "store/cases.csv"));
}

#[test]
fn malformed_configs_are_rejected() {
    let base = std::fs::read_to_string(repo_path("configs/smoke.toml")).unwrap();
    let bad_version = base.replace("schema_version = 1", "schema_version = 2");
    assert!(matches!(PipelineConfig::from_toml(&bad_version), Err(TriageError::Config(_))));
    let both = base.replace("[synth]", "store = \"x\"\n[synth]");
    assert!(matches!(PipelineConfig::from_toml(&both), Err(TriageError::Config(_))));
    let unknown = base.replace("[rct]", "[rct]\nbogus = 1");
    assert!(matches!(PipelineConfig::from_toml(&unknown), Err(TriageError::Config(_))));
    assert!(matches!(
        PipelineConfig::load(Path::new("/nonexistent/run.toml")),
        Err(TriageError::MissingPath(_))
    ));
}
