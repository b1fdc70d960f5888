use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use triage_core::baseline::build_table;
use triage_core::features::{assemble_with, write_csv, FeatureConfig, FeatureExtractor};
use triage_core::harness::{run_plan, training_design, write_outputs, EvaluationPlan, RankedList};
use triage_core::models::{fit_design, Family, Hyperparameters, ModelSpec};
use triage_core::pipeline::{report_tables, run_all, PipelineConfig};
use triage_core::prescription::{flag_prescribed, Rule, ThresholdTable};
use triage_core::rct::{assign_week, outcomes_report, read_cohorts, write_outcomes, EnrollmentLedger, ARM_SIZE};
use triage_core::synth::{generate_to, SynthConfig};
use triage_core::{CaseStore, Day, FileFormat, Result, TriageError, Unit};

const OUT_DIR_ENV: &str = "TRIAGE_OUT_DIR";

/// Case-triage toolkit: ingest, features, training, evaluation, prescription
/// screening and randomized cohorts.
#[derive(Parser)]
#[command(name = "triage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a case register and event log and save them as a store.
    Ingest(IngestArgs),
    /// Generate a synthetic store.
    Synth(SynthArgs),
    /// Write the feature matrix for a unit's open cases at a date.
    Features(FeaturesArgs),
    /// Train one model on observations fully labeled by a date.
    Train(TrainArgs),
    /// Write the empirical base-rate table.
    Baseline(BaselineArgs),
    /// Run a rolling evaluation plan.
    Evaluate(EvaluateArgs),
    /// Flag potentially prescribed cases in the bottom of a ranking.
    Prescribe(PrescribeArgs),
    /// Randomized weekly cohorts.
    #[command(subcommand)]
    Rct(RctCommand),
    /// Rebuild summary tables from a results directory.
    Report(ReportArgs),
    /// Run every stage from one config and write a hashed manifest.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    events: PathBuf,
    /// csv or jsonl; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Store directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_cases: Option<usize>,
    #[arg(long, alias = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "MAT")]
    unit: Unit,
    #[arg(long)]
    as_of: Day,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "MAT")]
    unit: Unit,
    #[arg(long)]
    through: Day,
    #[arg(long, default_value = "random_forest")]
    family: Family,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    /// Cap on training examples; 0 keeps all.
    #[arg(long, default_value_t = 6000)]
    max_examples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    as_of: Day,
    #[arg(long, alias = "prior", default_value_t = 20.0)]
    prior_strength: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    store: PathBuf,
    /// TOML evaluation plan.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PrescribeArgs {
    #[arg(long)]
    store: PathBuf,
    /// Ranked-list CSV as written by `evaluate`.
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    penalties: PathBuf,
    #[arg(long, default_value = "mean")]
    rule: Rule,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Screening date; taken from a leading YYYY-MM-DD in the ranked file
    /// name, else the store's extraction date.
    #[arg(long)]
    as_of: Option<Day>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum RctCommand {
    /// Assign this week's cohort and append it to the ledger.
    Assign(RctAssignArgs),
    /// Per-arm resolution summaries for saved cohorts.
    Report(RctReportArgs),
}

#[derive(Args)]
struct RctAssignArgs {
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = ARM_SIZE)]
    arm_size: usize,
    /// Ranking date; required unless the ranked file name starts with YYYY-MM-DD.
    #[arg(long)]
    as_of: Option<Day>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RctReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Directory of cohort CSVs.
    #[arg(long)]
    cohorts: PathBuf,
    #[arg(long, default_value_t = 183)]
    horizon_days: i32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `evaluation/` and optionally `prescription/`.
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
}

fn date_from_name(path: &Path) -> Option<Day> {
    let name = path.file_name()?.to_str()?;
    name.get(..10)?.parse().ok()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| TriageError::io(dir, e)),
        None => Ok(()),
    }
}

fn format_for(path: &Path, explicit: Option<&str>) -> Result<FileFormat> {
    match explicit {
        Some(f) => f.parse(),
        None => Ok(FileFormat::from_path(path)),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let format = format_for(&a.cases, a.format.as_deref())?;
    let store = CaseStore::ingest(&a.cases, &a.events, format)?;
    store.save(&a.out)?;
    if !store.rejects().is_empty() {
        store.write_rejects(&a.out.join("rejects.csv"))?;
    }
    println!(
        "ingested {} cases, {} rejected rows, extraction date {}",
        store.len(),
        store.rejects().len(),
        store.extraction_date()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_cases {
        cfg.n_cases = n;
    }
    let store = generate_to(&cfg, &a.out_dir)?;
    println!("generated {} cases into {}", store.len(), a.out_dir.display());
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let store = CaseStore::load(&a.store)?;
    let ext = FeatureExtractor::new(&store, a.as_of, FeatureConfig::default());
    let vectors = assemble_with(&ext, a.unit, a.as_of);
    ensure_parent(&a.out)?;
    write_csv(&a.out, &vectors, ext.schema())?;
    println!("{} cases x {} features", vectors.len(), ext.schema().len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let store = CaseStore::load(&a.store)?;
    let mut h = Hyperparameters::default();
    if let Some(n) = a.n_trees {
        h.n_trees = n;
    }
    if a.max_depth.is_some() {
        h.max_depth = a.max_depth;
    }
    if let Some(l) = a.min_samples_leaf {
        h.min_samples_leaf = l;
    }
    if let Some(l2) = a.l2 {
        h.l2 = l2;
    }
    let spec = ModelSpec::new(a.family, h, a.seed);
    let plan = EvaluationPlan {
        unit: a.unit,
        train_start: store.first_date().unwrap_or(a.through),
        max_train_examples: a.max_examples,
        seed: a.seed,
        ..EvaluationPlan::default()
    };
    let ext = FeatureExtractor::new(&store, a.through, FeatureConfig::default());
    let design = training_design(&store, &ext, &plan, a.through)?;
    let model = fit_design(&spec, &design, ext.schema().names().to_vec(), a.through)?;
    ensure_parent(&a.out)?;
    model.save(&a.out)?;
    println!("trained {} on {} examples through {}", spec.tag(), design.n, a.through);
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let store = CaseStore::load(&a.store)?;
    let table = build_table(&store, a.as_of, a.prior_strength)?;
    ensure_parent(&a.out)?;
    table.write_csv(&a.out)?;
    println!("global rate {:.4} over {} categories", table.global_rate, table.per_crime.len());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let store = CaseStore::load(&a.store)?;
    let mut plan = EvaluationPlan::load(&a.plan)?;
    if let Some(first) = store.first_date() {
        plan.train_start = plan.train_start.max(first);
    }
    if plan.prediction_dates.is_empty() {
        plan.prediction_dates = plan.default_dates(&store);
    }
    let results = run_plan(&store, &plan)?;
    let written = write_outputs(&results, &store, &a.out_dir)?;
    for s in results.summaries() {
        println!("{:<50} P@{} {:.4} (se {:.4})", s.tag, plan.k_top, s.mean_precision, s.se_precision);
    }
    println!("{} files written to {}", written.len(), a.out_dir.display());
    Ok(())
}

fn prescribe(a: PrescribeArgs) -> Result<()> {
    let store = CaseStore::load(&a.store)?;
    let table = ThresholdTable::load(&a.penalties)?;
    let as_of = a.as_of.or_else(|| date_from_name(&a.ranked)).unwrap_or(store.extraction_date());
    let ranked = RankedList::read_csv(&a.ranked, as_of, "input")?;
    let outcome = flag_prescribed(&store, &ranked, &table, a.rule, a.k, as_of)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    ensure_parent(&a.out)?;
    outcome.write_csv(&a.out)?;
    println!(
        "{} of {} bottom cases potentially prescribed under T_{} at {}",
        outcome.flagged.len(),
        outcome.screened,
        a.rule,
        as_of
    );
    Ok(())
}

fn rct(cmd: RctCommand) -> Result<()> {
    match cmd {
        RctCommand::Assign(a) => {
            let as_of = a.as_of.or_else(|| date_from_name(&a.ranked)).ok_or_else(|| {
                TriageError::Config(format!("cannot infer the ranking date of {}; pass --as-of", a.ranked.display()))
            })?;
            let ranked = RankedList::read_csv(&a.ranked, as_of, "input")?;
            let mut ledger = EnrollmentLedger::open(&a.ledger)?;
            let week = ledger.next_week_index();
            let cohort = assign_week(&ranked, &ledger, a.seed, week, a.arm_size);
            ensure_parent(&a.out)?;
            cohort.write_csv(&a.out)?;
            ledger.record(&cohort)?;
            if cohort.shortfall {
                eprintln!("warning: eligible pool smaller than two arms of {}", a.arm_size);
            }
            println!(
                "week {week}: {} treatment, {} control, {} replacements",
                cohort.treatment().len(),
                cohort.control().len(),
                cohort.replacements_used
            );
            Ok(())
        }
        RctCommand::Report(a) => {
            let store = CaseStore::load(&a.store)?;
            let members = read_cohorts(&a.cohorts)?;
            let rows = outcomes_report(&store, &members, a.horizon_days)?;
            ensure_parent(&a.out)?;
            write_outcomes(&a.out, &rows)?;
            for r in &rows {
                println!("{}: {} / {} resolved", r.arm.as_str(), r.resolved, r.n);
            }
            Ok(())
        }
    }
}

fn report(a: ReportArgs) -> Result<()> {
    for p in report_tables(&a.results)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_all_cmd(a: RunAllArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let out = a
        .out_dir
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| TriageError::Config(format!("no output directory: set output_dir, --out-dir or {OUT_DIR_ENV}")))?;
    let outcome = run_all(&cfg, &out)?;
    println!(
        "{} artifacts, manifest {} ({})",
        outcome.manifest.artifacts.len(),
        outcome.manifest_path.display(),
        outcome.manifest.hash()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Baseline(a) => baseline(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Prescribe(a) => prescribe(a),
        Command::Rct(c) => rct(c),
        Command::Report(a) => report(a),
        Command::RunAll(a) => run_all_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
