//! End-to-end run: store → evaluation → prescription screen → optional
//! randomized cohorts → report tables, with a hashed artifact manifest.
//!
//! Every stage seed derives from the config's master seed:
//! `derive_seed(seed, "synth")`, `derive_seed(seed, "plan")`,
//! `derive_indexed(derive_seed(seed, "models"), i)` for the i-th model spec
//! and `derive_seed(seed, "rct")` for cohort permutations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_store::{CaseStore, Unit};
use crate::error::{Result, TriageError};
use crate::harness::{run_plan, select_best_per_family, write_outputs, EvaluationPlan, PlanResults, EMPIRICAL_TAG};
use crate::prescription::{flag_prescribed, Rule, ThresholdTable};
use crate::rct::{assign_week, outcomes_report, write_outcomes, EnrollmentLedger, ARM_SIZE};
use crate::rng::{derive_indexed, derive_seed};
use crate::synth::{generate, SynthConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrescriptionSettings {
    pub penalties: PathBuf,
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default = "default_k_bottom")]
    pub k_bottom: usize,
}

fn default_rule() -> Rule {
    Rule::Mean
}

fn default_k_bottom() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RctSettings {
    pub enabled: bool,
    /// Cohorts are drawn on the last `weeks` prediction dates.
    pub weeks: usize,
    pub arm_size: usize,
}

impl Default for RctSettings {
    fn default() -> Self {
        RctSettings { enabled: false, weeks: 6, arm_size: ARM_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_unit")]
    pub unit: Unit,
    /// Store directory to load; mutually exclusive with `synth`.
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub plan: EvaluationPlan,
    pub prescription: PrescriptionSettings,
    #[serde(default)]
    pub rct: RctSettings,
}

fn default_unit() -> Unit {
    Unit::Mat
}

impl PipelineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| TriageError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            TriageError::Config(m) => TriageError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = cfg.store.as_mut() {
            resolve(s);
        }
        if let Some(o) = cfg.output_dir.as_mut() {
            resolve(o);
        }
        resolve(&mut cfg.prescription.penalties);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| TriageError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(TriageError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        match (&cfg.store, &cfg.synth) {
            (Some(_), Some(_)) => return Err(TriageError::Config("set either store or synth, not both".into())),
            (None, None) => return Err(TriageError::Config("one of store or synth is required".into())),
            _ => {}
        }
        Ok(cfg)
    }

    /// Checks every referenced path exists.
    pub fn check_paths(&self) -> Result<()> {
        if let Some(s) = &self.store {
            if !s.exists() {
                return Err(TriageError::MissingPath(s.clone()));
            }
        }
        if !self.prescription.penalties.exists() {
            return Err(TriageError::MissingPath(self.prescription.penalties.clone()));
        }
        Ok(())
    }

    /// The plan with the unit, seeds and default dates filled in.
    pub fn resolved_plan(&self, store: &CaseStore) -> EvaluationPlan {
        let mut plan = self.plan.clone();
        plan.unit = self.unit;
        plan.seed = derive_seed(self.seed, "plan");
        let models = derive_seed(self.seed, "models");
        for (i, s) in plan.model_specs.iter_mut().enumerate() {
            s.seed = derive_indexed(models, i as u64);
        }
        if let Some(first) = store.first_date() {
            plan.train_start = plan.train_start.max(first);
        }
        if plan.prediction_dates.is_empty() {
            plan.prediction_dates = plan.default_dates(store);
        }
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    /// Digest over the listed artifacts and the run status.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| TriageError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| TriageError::io(dir, e))? {
        let p = entry.map_err(|e| TriageError::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `root` except the manifest itself.
pub fn build_manifest(root: &Path, seed: u64, failure: Option<(&str, &TriageError)>) -> Result<Manifest> {
    let mut files = Vec::new();
    if root.exists() {
        collect_files(root, &mut files)?;
    }
    let mut artifacts = Vec::new();
    for f in files {
        let rel = f.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::metadata(&f).map_err(|e| TriageError::io(&f, e))?.len();
        artifacts.push(ManifestEntry { path: rel, sha256: file_sha256(&f)?, bytes });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest {
        schema_version: SCHEMA_VERSION,
        seed,
        status: if failure.is_some() { "failed" } else { "ok" }.to_string(),
        failed_stage: failure.map(|(s, _)| s.to_string()),
        error: failure.map(|(_, e)| e.to_string()),
        artifacts,
    })
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| TriageError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| TriageError::io(&path, e))?;
    Ok(path)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// One row of the weekly prescription screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagCount {
    pub model: String,
    pub as_of: crate::date::Day,
    pub rule: Rule,
    pub screened: usize,
    pub flagged: usize,
}

/// Models carried into the report: the best spec per family, then the
/// empirical baseline. The first entry is the overall best by mean
/// Precision@k_top.
pub fn report_models(results: &PlanResults) -> Vec<String> {
    let best = select_best_per_family(results);
    let mut tags: Vec<(String, f64)> = best
        .values()
        .map(|(t, _)| (t.clone(), results.summary(t).map_or(0.0, |s| s.mean_precision)))
        .collect();
    if results.plan.include_empirical {
        let m = results.summary(EMPIRICAL_TAG).map_or(0.0, |s| s.mean_precision);
        tags.push((EMPIRICAL_TAG.to_string(), m));
    }
    // stable: equal means keep family order
    tags.sort_by(|a, b| b.1.total_cmp(&a.1));
    tags.into_iter().map(|(t, _)| t).collect()
}

/// Weekly bottom-tail screen for every report model under every rule.
pub fn prescription_counts(
    store: &CaseStore,
    results: &PlanResults,
    table: &ThresholdTable,
    k_bottom: usize,
) -> Result<Vec<FlagCount>> {
    let mut out = Vec::new();
    for tag in report_models(results) {
        for run in results.runs_for(&tag) {
            for rule in Rule::ALL {
                let f = flag_prescribed(store, &run.ranked, table, rule, k_bottom, run.ranked.as_of)?;
                out.push(FlagCount {
                    model: tag.clone(),
                    as_of: run.ranked.as_of,
                    rule,
                    screened: f.screened,
                    flagged: f.flagged.len(),
                });
            }
        }
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| TriageError::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| TriageError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(TriageError::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| TriageError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

fn stage_prescription(
    store: &CaseStore,
    results: &PlanResults,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<()> {
    let dir = out.join("prescription");
    fs::create_dir_all(&dir).map_err(|e| TriageError::io(&dir, e))?;
    let table = ThresholdTable::load(&cfg.prescription.penalties)?;
    table.write_csv(&dir.join("thresholds.csv"))?;
    let k = cfg.prescription.k_bottom;
    let counts = prescription_counts(store, results, &table, k)?;
    write_rows(&dir.join("counts.csv"), &counts)?;

    let mut warnings: Vec<String> = table
        .missing_categories(store)
        .into_iter()
        .map(|c| format!("category {c} has no prescription thresholds"))
        .collect();
    if let Some(primary) = report_models(results).first() {
        for run in results.runs_for(primary) {
            let f = flag_prescribed(store, &run.ranked, &table, cfg.prescription.rule, k, run.ranked.as_of)?;
            f.write_csv(&dir.join(format!("flags_{}.csv", run.ranked.as_of)))?;
            warnings.extend(f.warnings);
        }
    }
    let path = dir.join("warnings.txt");
    let text: String = warnings.iter().map(|w| format!("{w}\n")).collect();
    fs::write(&path, text).map_err(|e| TriageError::io(&path, e))
}

fn stage_rct(store: &CaseStore, results: &PlanResults, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let dir = out.join("rct");
    fs::create_dir_all(dir.join("cohorts")).map_err(|e| TriageError::io(&dir, e))?;
    let ledger_path = dir.join("ledger.csv");
    if ledger_path.exists() {
        // each run starts its own enrollment history
        fs::remove_file(&ledger_path).map_err(|e| TriageError::io(&ledger_path, e))?;
    }
    let mut ledger = EnrollmentLedger::open(&ledger_path)?;
    let Some(primary) = report_models(results).into_iter().next() else {
        return Err(TriageError::Data("no model available for cohort assignment".into()));
    };
    let runs: Vec<_> = results.runs_for(&primary).collect();
    let start = runs.len().saturating_sub(cfg.rct.weeks);
    let seed = derive_seed(cfg.seed, "rct");
    let mut members = Vec::new();
    for (week, run) in runs[start..].iter().enumerate() {
        let cohort = assign_week(&run.ranked, &ledger, derive_indexed(seed, week as u64), week, cfg.rct.arm_size);
        ledger.record(&cohort)?;
        cohort.write_csv(&dir.join("cohorts").join(format!("week_{week:02}.csv")))?;
        members.extend(cohort.members);
    }
    let report = outcomes_report(store, &members, results.plan.label_horizon_days)?;
    write_outcomes(&dir.join("outcomes.csv"), &report)
}

/// Runs every stage into `out`, then writes the manifest. On a stage
/// failure the manifest still lists the partial outputs and the error is
/// returned.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<RunOutcome> {
    cfg.check_paths()?;
    fs::create_dir_all(out).map_err(|e| TriageError::io(out, e))?;
    let result = run_stages(cfg, out);
    let failure = result.as_ref().err();
    let manifest = build_manifest(out, cfg.seed, failure.map(|(s, e)| (*s, e)))?;
    let manifest_path = write_manifest(out, &manifest)?;
    match result {
        Ok(()) => Ok(RunOutcome { manifest, manifest_path }),
        Err((_, e)) => Err(e),
    }
}

fn run_stages(cfg: &PipelineConfig, out: &Path) -> std::result::Result<(), (&'static str, TriageError)> {
    let store = match (&cfg.store, &cfg.synth) {
        (Some(dir), _) => CaseStore::load(dir).map_err(|e| ("ingest", e))?,
        (None, Some(synth)) => {
            let synth = SynthConfig { seed: derive_seed(cfg.seed, "synth"), ..synth.clone() };
            let store = generate(&synth).map_err(|e| ("synth", e))?;
            store.save(&out.join("store")).map_err(|e| ("synth", e))?;
            store
        }
        (None, None) => unreachable!("validated config"),
    };
    let plan = cfg.resolved_plan(&store);
    let results = run_plan(&store, &plan).map_err(|e| ("evaluate", e))?;
    write_outputs(&results, &store, &out.join("evaluation")).map_err(|e| ("evaluate", e))?;
    stage_prescription(&store, &results, cfg, out).map_err(|e| ("prescribe", e))?;
    if cfg.rct.enabled {
        stage_rct(&store, &results, cfg, out).map_err(|e| ("rct", e))?;
    }
    report_tables(out).map_err(|e| ("report", e))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct WeeklyRow {
    as_of: crate::date::Day,
    model: String,
    family: String,
    precision_at_k: f64,
    recall_at_k: f64,
}

#[derive(Debug, Deserialize)]
struct BestRow {
    family: String,
    model: String,
    weeks: usize,
    mean_precision_at_k: f64,
    se_precision_at_k: f64,
    mean_recall_at_k: f64,
}

/// Writes the summary tables under `dir/tables` from the evaluation and
/// prescription outputs in `dir`:
///
/// * `table1_best_models.csv`: family, model, mean Precision/Recall@K;
/// * `table2_prescribed.csv`: per model, mean flagged count and share of
///   the bottom tail under the mean rule;
/// * `appendix_b_thresholds.csv`: per model, mean flagged count under the
///   min, mean and max rules;
/// * `weekly_precision.csv` and `weekly_flagged.csv`: per-week series.
pub fn report_tables(dir: &Path) -> Result<Vec<PathBuf>> {
    let best: Vec<BestRow> = read_rows(&dir.join("evaluation").join("best_models.csv"))?;
    if best.is_empty() {
        return Err(TriageError::Data(format!("no evaluation results under {}", dir.display())));
    }
    let tables = dir.join("tables");
    fs::create_dir_all(&tables).map_err(|e| TriageError::io(&tables, e))?;
    let mut written = Vec::new();
    let err = |e: csv::Error| TriageError::Internal(e.to_string());

    let path = tables.join("table1_best_models.csv");
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["family", "model", "weeks", "precision_at_k", "se", "recall_at_k"]).map_err(err)?;
    for b in &best {
        w.write_record([
            b.family.clone(),
            b.model.clone(),
            b.weeks.to_string(),
            b.mean_precision_at_k.to_string(),
            b.se_precision_at_k.to_string(),
            b.mean_recall_at_k.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TriageError::io(&path, e))?;
    written.push(path);

    let weekly: Vec<WeeklyRow> = read_rows(&dir.join("evaluation").join("weekly_metrics.csv"))?;
    let keep: Vec<&str> = best.iter().map(|b| b.model.as_str()).collect();
    let path = tables.join("weekly_precision.csv");
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["as_of", "model", "family", "precision_at_k", "recall_at_k"]).map_err(err)?;
    for r in weekly.iter().filter(|r| keep.contains(&r.model.as_str())) {
        w.write_record([
            r.as_of.to_string(),
            r.model.clone(),
            r.family.clone(),
            r.precision_at_k.to_string(),
            r.recall_at_k.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TriageError::io(&path, e))?;
    written.push(path);

    let counts_path = dir.join("prescription").join("counts.csv");
    if counts_path.exists() {
        let counts: Vec<FlagCount> = read_rows(&counts_path)?;
        let mut models: Vec<String> = Vec::new();
        let mut acc: BTreeMap<(String, Rule), (f64, f64, usize)> = BTreeMap::new();
        for c in &counts {
            if !models.contains(&c.model) {
                models.push(c.model.clone());
            }
            let a = acc.entry((c.model.clone(), c.rule)).or_default();
            a.0 += c.flagged as f64;
            a.1 += if c.screened == 0 { 0.0 } else { c.flagged as f64 / c.screened as f64 };
            a.2 += 1;
        }
        let mean = |m: &str, r: Rule| {
            acc.get(&(m.to_string(), r))
                .map_or((0.0, 0.0), |a| (a.0 / a.2 as f64, a.1 / a.2 as f64))
        };

        let path = tables.join("table2_prescribed.csv");
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(["model", "rule", "mean_flagged", "share_of_bottom"]).map_err(err)?;
        for m in &models {
            let (n, s) = mean(m, Rule::Mean);
            w.write_record([m.clone(), Rule::Mean.to_string(), n.to_string(), s.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| TriageError::io(&path, e))?;
        written.push(path);

        let path = tables.join("appendix_b_thresholds.csv");
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(["model", "t_max", "t_mean", "t_min"]).map_err(err)?;
        for m in &models {
            w.write_record([
                m.clone(),
                mean(m, Rule::Max).0.to_string(),
                mean(m, Rule::Mean).0.to_string(),
                mean(m, Rule::Min).0.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| TriageError::io(&path, e))?;
        written.push(path);

        let path = tables.join("weekly_flagged.csv");
        write_rows(&path, &counts)?;
        written.push(path);
    }
    Ok(written)
}
