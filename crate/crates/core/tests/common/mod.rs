#![allow(dead_code)]

use std::path::PathBuf;

use triage_core::harness::{RankedEntry, RankedList};
use triage_core::synth::{generate, SynthConfig};
use triage_core::{CaseRecord, CaseStore, Day, EventType, ProceduralEvent, Unit};

pub fn d(n: i32) -> Day {
    Day(20_000 + n)
}

pub fn case(id: &str, opened: Day, category: &str, municipality: &str) -> CaseRecord {
    CaseRecord {
        case_id: id.into(),
        opened_at: opened,
        crime_category: category.into(),
        municipality: municipality.into(),
        unit: Unit::Mat,
        lawyer_id: "L1".into(),
        arrested_at_intake: false,
        closed_at: None,
        closure_kind: None,
        crime_date: None,
    }
}

pub fn event(id: &str, seq: u32, ty: EventType, day: Day) -> ProceduralEvent {
    ProceduralEvent {
        case_id: id.into(),
        seq,
        event_type: ty,
        occurred_at: day,
        actor_lawyer: "L1".into(),
        from_unit: None,
        to_unit: None,
    }
}

/// Store of open MAT cases, each with only its initialization event.
pub fn open_store(cases: Vec<CaseRecord>, extraction: Day) -> CaseStore {
    let events = cases.iter().map(|c| event(&c.case_id, 1, EventType::Initialized, c.opened_at)).collect();
    CaseStore::from_parts(cases, events, Some(extraction)).expect("valid fixture")
}

pub fn synth_store(n_cases: usize, seed: u64, activity_effect: f64) -> CaseStore {
    let cfg = SynthConfig { n_cases, seed, activity_effect, ..SynthConfig::default() };
    generate(&cfg).expect("synthetic store")
}

/// Ranked list with realized labels; entries are `(case_id, score, opened_at, label)`.
pub fn ranked(as_of: Day, rows: &[(&str, f64, Day, bool)]) -> RankedList {
    let entries = rows
        .iter()
        .map(|(id, s, o, l)| RankedEntry { case_id: id.to_string(), score: *s, opened_at: *o, label: Some(*l) })
        .collect();
    RankedList::new(as_of, "fixture", entries)
}

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Brute-force Precision@k and Recall@k: each row's rank is the number of
/// rows ahead of it under (score desc, opened asc, id asc).
pub fn oracle_at_k(rows: &[(String, f64, Day, bool)], k: usize) -> (f64, Option<f64>) {
    let ahead = |a: &(String, f64, Day, bool), b: &(String, f64, Day, bool)| {
        a.1 > b.1 || (a.1 == b.1 && (a.2 < b.2 || (a.2 == b.2 && a.0 < b.0)))
    };
    let mut hits = 0usize;
    let mut used = 0usize;
    for r in rows {
        let rank = rows.iter().filter(|o| ahead(o, r)).count();
        if rank < k {
            used += 1;
            hits += r.3 as usize;
        }
    }
    let total = rows.iter().filter(|r| r.3).count();
    let precision = if used == 0 { 0.0 } else { hits as f64 / used as f64 };
    let recall = (total > 0).then(|| hits as f64 / total as f64);
    (precision, recall)
}
