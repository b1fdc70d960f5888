mod common;

use common::{case, d, event};
use triage_core::case_store::ClosureKind;
use triage_core::harness::{run_plan, weekly_dates, write_outputs, EvaluationPlan, EMPIRICAL_TAG};
use triage_core::models::{Family, Hyperparameters, ModelSpec};
use triage_core::{CaseStore, EventType};

fn all_positive_store(n: usize) -> CaseStore {
    let mut cases = Vec::new();
    let mut events = Vec::new();
    for i in 0..n {
        let id = format!("C{i:02}");
        let mut c = case(&id, d(0), "ROBO", "M1");
        c.closed_at = Some(d(380 + i as i32));
        c.closure_kind = Some(ClosureKind::AdministrativeClosure);
        events.push(event(&id, 1, EventType::Initialized, d(0)));
        events.push(event(&id, 2, EventType::Closure, d(380 + i as i32)));
        cases.push(c);
    }
    CaseStore::from_parts(cases, events, Some(d(600))).unwrap()
}

#[test]
fn dummy_on_all_positive_population_is_perfect() {
    let store = all_positive_store(20);
    let plan = EvaluationPlan {
        prediction_dates: vec![d(370)],
        train_start: d(0),
        model_specs: Vec::new(),
        include_empirical: false,
        ..Default::default()
    };
    let results = run_plan(&store, &plan).unwrap();
    let run = &results.dates[0].runs[0];
    assert_eq!(run.tag, "dummy");
    assert_eq!(run.precision.value, 1.0);
    assert_eq!(run.precision.k_used, 20);
    assert!(run.precision.flagged);
    assert_eq!(run.recall.value, 1.0);
}

#[test]
fn invalid_plans_are_rejected() {
    let store = all_positive_store(5);
    let late = EvaluationPlan { prediction_dates: vec![d(500)], train_start: d(0), ..Default::default() };
    assert!(run_plan(&store, &late).is_err());
    let early = EvaluationPlan { prediction_dates: vec![d(100)], train_start: d(0), ..Default::default() };
    assert!(run_plan(&store, &early).is_err());
    assert!(run_plan(&store, &EvaluationPlan::default()).is_err());
}

fn small_plan(store: &CaseStore, weeks: usize) -> EvaluationPlan {
    let first = store.first_date().unwrap();
    EvaluationPlan {
        prediction_dates: weekly_dates(first.plus(500), weeks),
        train_start: first,
        k_top: 100,
        model_specs: vec![
            ModelSpec::new(Family::RandomForest, Hyperparameters { n_trees: 10, max_depth: Some(6), ..Default::default() }, 1),
            ModelSpec::new(Family::ScaledLogistic, Hyperparameters::default(), 1),
        ],
        refit_every_weeks: 2,
        max_train_examples: 1500,
        ..Default::default()
    }
}

#[test]
fn truncating_after_the_last_outcome_changes_nothing() {
    let store = common::synth_store(2500, 31, 1.5);
    let plan = small_plan(&store, 3);
    let full = run_plan(&store, &plan).unwrap();
    let last = *plan.prediction_dates.last().unwrap();
    for extra in [0, 40] {
        let cut = store.truncate(last.plus(183 + extra));
        let truncated = run_plan(&cut, &plan).unwrap();
        assert_eq!(full, truncated, "truncated {extra} days after the last horizon");
    }
    assert_eq!(full.tags().len(), 4);
    assert!(full.tags().contains(&EMPIRICAL_TAG.to_string()));
    for date in &full.dates {
        let first = &date.runs[0].ranked;
        for run in &date.runs {
            assert_eq!(run.ranked.len(), date.n_scored);
            assert!(run.ranked.entries.windows(2).all(|w| w[0].score >= w[1].score));
            let mut a: Vec<&str> = run.ranked.entries.iter().map(|e| e.case_id.as_str()).collect();
            let mut b: Vec<&str> = first.entries.iter().map(|e| e.case_id.as_str()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn evaluation_artifacts_are_written() {
    let store = common::synth_store(2000, 32, 1.5);
    let plan = small_plan(&store, 2);
    let results = run_plan(&store, &plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_outputs(&results, &store, dir.path()).unwrap();
    for name in [
        "weekly_metrics.csv",
        "best_models.csv",
        "grouped_importance.csv",
        "family_importance.csv",
        "subgroup_municipality.csv",
        "subgroup_crime_category.csv",
    ] {
        assert!(written.contains(&dir.path().join(name)), "{name}");
    }
    let ranked = std::fs::read_dir(dir.path().join("ranked")).unwrap().count();
    assert_eq!(ranked, 2 * results.tags().len());
    let weekly = std::fs::read_to_string(dir.path().join("weekly_metrics.csv")).unwrap();
    assert_eq!(weekly.lines().count(), 1 + 2 * results.tags().len());
    let grouped = results.grouped_importances(&results.tags()[0]).unwrap();
    assert!((grouped.values().sum::<f64>() - 1.0).abs() < 1e-9);
}
