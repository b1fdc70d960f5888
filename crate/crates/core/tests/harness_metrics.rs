mod common;

use std::collections::HashMap;

use common::{case, d, oracle_at_k, open_store, ranked};
use proptest::prelude::*;
use triage_core::harness::{
    precision_at_k, recall_at_k, select_best_per_family, subgroup_diagnostics, AtK, DateResult, EvaluationPlan,
    Grouping, ModelRun, PlanResults, RankedEntry, RankedList,
};
use triage_core::models::{Family, Hyperparameters, ModelSpec};
use triage_core::Day;

fn fixture_rows() -> impl Strategy<Value = Vec<(String, f64, Day, bool)>> {
    prop::collection::vec((0u8..6, 0i32..5, any::<bool>()), 0..=50).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (s, o, l))| (format!("C{i:03}"), s as f64 / 5.0, d(o), l))
            .collect()
    })
}

proptest! {
    #[test]
    fn metrics_match_brute_force(rows in fixture_rows(), k in 0usize..60) {
        let refs: Vec<(&str, f64, Day, bool)> = rows.iter().map(|(i, s, o, l)| (i.as_str(), *s, *o, *l)).collect();
        let list = ranked(d(10), &refs);
        let (p, r) = oracle_at_k(&rows, k);
        let got_p = precision_at_k(&list, k).unwrap();
        prop_assert_eq!(got_p.value, p);
        prop_assert_eq!(got_p.flagged, rows.len() < k);
        let got_r = recall_at_k(&list, k).unwrap();
        match r {
            Some(r) => prop_assert_eq!(got_r.value, r),
            None => prop_assert!(got_r.flagged && got_r.value == 0.0),
        }
    }
}

#[test]
fn top_three_arithmetic_and_short_list() {
    let list = ranked(d(0), &[("A", 0.9, d(0), true), ("B", 0.8, d(0), true), ("C", 0.7, d(0), false)]);
    assert_eq!(precision_at_k(&list, 3).unwrap().value, 2.0 / 3.0);
    let short = precision_at_k(&list, 300).unwrap();
    assert_eq!(short, AtK { value: 2.0 / 3.0, k_used: 3, flagged: true });
}

#[test]
fn ties_break_on_opening_then_id() {
    let list = ranked(d(9), &[("B", 0.5, d(1), false), ("A", 0.5, d(1), true), ("C", 0.5, d(0), false)]);
    let ids: Vec<&str> = list.entries.iter().map(|e| e.case_id.as_str()).collect();
    assert_eq!(ids, ["C", "A", "B"]);
}

#[test]
fn unrealized_labels_are_an_error() {
    let entries = vec![RankedEntry { case_id: "A".into(), score: 0.1, opened_at: d(0), label: None }];
    let list = RankedList::new(d(1), "m", entries);
    assert!(precision_at_k(&list, 1).is_err());
    assert!(recall_at_k(&list, 1).is_err());
}

#[test]
fn zero_positives_flag_recall() {
    let list = ranked(d(0), &[("A", 0.9, d(0), false), ("B", 0.1, d(0), false)]);
    let r = recall_at_k(&list, 1).unwrap();
    assert!(r.flagged);
    assert_eq!(r.value, 0.0);
}

fn municipal_store(groups: &[(&str, &str)]) -> triage_core::CaseStore {
    open_store(groups.iter().map(|(id, m)| case(id, d(0), "ROBO", m)).collect(), d(400))
}

#[test]
fn single_group_has_zero_exposure() {
    let ids: Vec<String> = (0..10).map(|i| format!("C{i}")).collect();
    let groups: Vec<(&str, &str)> = ids.iter().map(|i| (i.as_str(), "M1")).collect();
    let store = municipal_store(&groups);
    let rows: Vec<(&str, f64, Day, bool)> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i as f64, d(0), i % 2 == 0)).collect();
    let list = ranked(d(10), &rows);
    let out = subgroup_diagnostics(&store, &[&list], Grouping::Municipality, 3, 1).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].exposure, 0.0);
}

#[test]
fn absent_group_exposure_is_minus_its_share() {
    let ids: Vec<String> = (0..10).map(|i| format!("C{i}")).collect();
    let groups: Vec<(&str, &str)> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), if i == 9 { "M2" } else { "M1" })).collect();
    let store = municipal_store(&groups);
    let rows: Vec<(&str, f64, Day, bool)> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), 1.0 - i as f64 / 10.0, d(0), true)).collect();
    let list = ranked(d(10), &rows);
    let out = subgroup_diagnostics(&store, &[&list], Grouping::Municipality, 5, 1).unwrap();
    let m2 = out.iter().find(|r| r.group == "M2").unwrap();
    assert_eq!(m2.in_top_k, 0);
    assert!((m2.exposure + 0.1).abs() < 1e-12);
}

#[test]
fn two_group_hand_count() {
    // Ranked order: A1 A2 B1 A3 B2 | B3 A4 B4 A5 B5, k = 5.
    // Top-5: A x3 (labels 1,0,1), B x2 (labels 1,0).
    // A: top share 3/5, population share 5/10, exposure 0.1; precision 2/3; positives 3 overall -> recall 2/3.
    // B: top share 2/5, population share 5/10, exposure -0.1; precision 1/2; positives 2 overall -> recall 1/2.
    let order = [
        ("A1", true),
        ("A2", false),
        ("B1", true),
        ("A3", true),
        ("B2", false),
        ("B3", true),
        ("A4", true),
        ("B4", false),
        ("A5", false),
        ("B5", false),
    ];
    let groups: Vec<(&str, &str)> = order.iter().map(|(id, _)| (*id, &id[..1])).collect();
    let store = municipal_store(&groups);
    let rows: Vec<(&str, f64, Day, bool)> =
        order.iter().enumerate().map(|(i, (id, l))| (*id, 10.0 - i as f64, d(0), *l)).collect();
    let list = ranked(d(10), &rows);
    let out = subgroup_diagnostics(&store, &[&list], Grouping::Municipality, 5, 6).unwrap();
    let a = out.iter().find(|r| r.group == "A").unwrap();
    let b = out.iter().find(|r| r.group == "B").unwrap();
    assert!((a.exposure - 0.1).abs() < 1e-12 && (b.exposure + 0.1).abs() < 1e-12);
    assert!((a.precision_at_k - 2.0 / 3.0).abs() < 1e-12 && (a.recall_at_k - 2.0 / 3.0).abs() < 1e-12);
    assert!((b.precision_at_k - 0.5).abs() < 1e-12 && (b.recall_at_k - 0.5).abs() < 1e-12);
    assert!(a.low_support && b.low_support);
}

fn results_with(specs: &[(ModelSpec, &[f64])]) -> PlanResults {
    let weeks = specs[0].1.len();
    let dates = (0..weeks)
        .map(|w| DateResult {
            as_of: d(7 * w as i32),
            trained_on: d(7 * w as i32),
            train_examples: 0,
            n_scored: 0,
            positives: 0,
            runs: specs
                .iter()
                .enumerate()
                .map(|(i, (spec, means))| ModelRun {
                    tag: format!("{}#{i}", spec.tag()),
                    spec: Some(spec.clone()),
                    ranked: RankedList::new(d(0), "x", Vec::new()),
                    precision: AtK { value: means[w], k_used: 300, flagged: false },
                    recall: AtK { value: 0.0, k_used: 300, flagged: false },
                    importances: None,
                })
                .collect(),
        })
        .collect();
    PlanResults { plan: EvaluationPlan::default(), dates, group_of: HashMap::new(), family_of: HashMap::new() }
}

fn forest(trees: usize) -> ModelSpec {
    ModelSpec::new(Family::RandomForest, Hyperparameters { n_trees: trees, ..Default::default() }, 1)
}

#[test]
fn best_per_family_selection() {
    let single = results_with(&[(forest(100), &[0.4])]);
    assert_eq!(select_best_per_family(&single)[&Family::RandomForest].1, forest(100));

    let higher = results_with(&[(forest(100), &[0.5, 0.5]), (forest(300), &[0.6, 0.6])]);
    assert_eq!(select_best_per_family(&higher)[&Family::RandomForest].1, forest(300));

    let tied = results_with(&[(forest(300), &[0.5, 0.7]), (forest(100), &[0.7, 0.5])]);
    assert_eq!(select_best_per_family(&tied)[&Family::RandomForest].1, forest(100));
}
