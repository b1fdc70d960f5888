mod common;

use std::collections::BTreeSet;

use common::{case, d, open_store, ranked, repo_path};
use proptest::prelude::*;
use triage_core::prescription::{
    category_thresholds, flag_prescribed, subtype_period, CrimeSubtype, PenaltyKind, Period, Rule, ThresholdTable,
};
use triage_core::synth::default_crime_mix;
use triage_core::Day;

// A: periods {1, 2, 6} -> (1, 3, 6) years. B: imprescriptible. U: unlegislated.
const TABLE: &str = "\
category,subtype_id,penalty_kind,prison_min_years,prison_max_years,imprescriptible
A,A_FINE,fine_only,,,false
A,A_RIGHTS,rights_only,,,false
A,A_PRISON,prison,2,10,false
B,B_ONLY,prison,20,40,true
U,U_NONE,unlegislated,,,false
";

fn table() -> ThresholdTable {
    ThresholdTable::from_csv_str(TABLE).unwrap()
}

const CATS: [&str; 4] = ["A", "B", "U", "Z"];

fn cases() -> impl Strategy<Value = Vec<(usize, i32, u8)>> {
    prop::collection::vec((0usize..4, 0i32..3000, 0u8..20), 1..80)
}

fn build(rows: &[(usize, i32, u8)], as_of: Day) -> (triage_core::CaseStore, triage_core::harness::RankedList) {
    let ids: Vec<String> = (0..rows.len()).map(|i| format!("C{i:03}")).collect();
    let records = rows.iter().zip(&ids).map(|((c, age, _), id)| case(id, as_of.minus(*age), CATS[*c], "M")).collect();
    let store = open_store(records, as_of.plus(1000));
    let list_rows: Vec<(&str, f64, Day, bool)> = rows
        .iter()
        .zip(&ids)
        .map(|((_, age, s), id)| (id.as_str(), *s as f64 / 20.0, as_of.minus(*age), false))
        .collect();
    (store, ranked(as_of, &list_rows))
}

fn flagged_ids(store: &triage_core::CaseStore, list: &triage_core::harness::RankedList, rule: Rule, k: usize, as_of: Day) -> BTreeSet<String> {
    flag_prescribed(store, list, &table(), rule, k, as_of).unwrap().ids().into_iter().map(str::to_string).collect()
}

proptest! {
    #[test]
    fn stricter_rules_flag_subsets(rows in cases(), k in 1usize..100) {
        let as_of = d(4000);
        let (store, list) = build(&rows, as_of);
        let max = flagged_ids(&store, &list, Rule::Max, k, as_of);
        let mean = flagged_ids(&store, &list, Rule::Mean, k, as_of);
        let min = flagged_ids(&store, &list, Rule::Min, k, as_of);
        prop_assert!(max.is_subset(&mean) && mean.is_subset(&min));
    }

    #[test]
    fn aging_never_unflags(rows in cases(), k in 1usize..100, extra in 0i32..2000) {
        let as_of = d(4000);
        let (store, list) = build(&rows, as_of);
        for rule in Rule::ALL {
            let now = flagged_ids(&store, &list, rule, k, as_of);
            let later = flagged_ids(&store, &list, rule, k, as_of.plus(extra));
            prop_assert!(now.is_subset(&later));
        }
    }

    #[test]
    fn only_legislated_old_bottom_cases_are_flagged(rows in cases(), k in 1usize..100) {
        let as_of = d(4000);
        let (store, list) = build(&rows, as_of);
        let out = flag_prescribed(&store, &list, &table(), Rule::Mean, k, as_of).unwrap();
        prop_assert_eq!(out.screened, k.min(rows.len()));
        let bottom: BTreeSet<&str> = list.bottom(k).map(|e| e.case_id.as_str()).collect();
        for f in &out.flagged {
            prop_assert!(bottom.contains(f.case_id.as_str()));
            prop_assert_eq!(f.crime_category.as_str(), "A");
            prop_assert!(f.age_days >= 3 * 365);
        }
        prop_assert!(out.flagged.windows(2).all(|w| w[0].score <= w[1].score));
        let unknown = list.bottom(k).filter(|e| store.get(&e.case_id).unwrap().crime_category == "Z").count();
        prop_assert_eq!(out.warnings.len(), unknown);
    }
}

#[test]
fn boundary_is_inclusive() {
    let as_of = d(5000);
    let t = 3 * 365;
    let (store, list) = build(&[(0, t, 1), (0, t - 1, 2)], as_of);
    let out = flag_prescribed(&store, &list, &table(), Rule::Mean, 10, as_of).unwrap();
    assert_eq!(out.ids().into_iter().collect::<Vec<_>>(), ["C000"]);
    assert_eq!(out.flagged[0].status, "potentially_prescribed");
}

#[test]
fn imprescriptible_is_never_flagged() {
    let as_of = d(60_000);
    let (store, list) = build(&[(1, 50_000, 0)], as_of);
    for rule in Rule::ALL {
        assert!(flag_prescribed(&store, &list, &table(), rule, 10, as_of).unwrap().flagged.is_empty());
    }
}

#[test]
fn period_rule_cases() {
    let sub = |kind, lo, hi| CrimeSubtype {
        category: "X".into(),
        subtype_id: "X1".into(),
        penalty_kind: kind,
        prison_min_years: lo,
        prison_max_years: hi,
        imprescriptible: false,
    };
    assert_eq!(subtype_period(&sub(PenaltyKind::FineOnly, None, None)).unwrap(), Period::Years(1.0));
    assert_eq!(subtype_period(&sub(PenaltyKind::RightsOnly, None, None)).unwrap(), Period::Years(2.0));
    assert_eq!(subtype_period(&sub(PenaltyKind::Prison, Some(1.0), Some(3.0))).unwrap(), Period::Years(3.0));
    assert_eq!(subtype_period(&sub(PenaltyKind::Prison, Some(2.0), Some(10.0))).unwrap(), Period::Years(6.0));
    assert!(subtype_period(&sub(PenaltyKind::Prison, Some(2.0), None)).is_err());
    assert!(category_thresholds(&[]).is_err());
}

#[test]
fn shipped_table_covers_every_synthetic_category() {
    let table = ThresholdTable::load(&repo_path("data/penalties.csv")).unwrap();
    for cat in default_crime_mix().keys() {
        assert!(table.get(cat).is_some() || table.unlegislated.contains(cat), "{cat}");
    }
    let store = common::synth_store(800, 2, 1.5);
    assert!(table.missing_categories(&store).is_empty());
}
