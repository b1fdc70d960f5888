//! As-of-date feature extraction.
//!
//! Every value is computed from events dated on or before `as_of`; the
//! per-store [`ActivityIndex`] only holds sorted date lists, and every query
//! against it is bounded by `as_of`.
//!
//! Columns come in five groups (case level, milestones, lawyer, unit, crime
//! type). Each column also carries a finer "family" tag used when reporting
//! importances: `moves` (event counts and rates), `estados_investigacion`
//! (progress updates), `days_since_open`, `days_since_last_event`, and so on.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case_store::{CaseStore, EventType, Milestone, ProceduralEvent, Unit, UnitExit};
use crate::date::Day;
use crate::error::{Result, TriageError};
use crate::par;

/// Trailing windows for per-case event counts (3 months, 6 months, 1 and 2 years).
pub const CASE_WINDOWS: [i32; 4] = [90, 183, 365, 730];
/// Windows for lawyer, unit and crime aggregates; `None` is the full history.
pub const ACTIVITY_WINDOWS: [Option<i32>; 4] = [Some(30), Some(90), Some(183), None];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    CaseLevel,
    Milestones,
    Lawyer,
    Unit,
    CrimeType,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::CaseLevel,
        FeatureGroup::Milestones,
        FeatureGroup::Lawyer,
        FeatureGroup::Unit,
        FeatureGroup::CrimeType,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::CaseLevel => "case_level",
            FeatureGroup::Milestones => "milestones",
            FeatureGroup::Lawyer => "lawyer",
            FeatureGroup::Unit => "unit",
            FeatureGroup::CrimeType => "crime_type",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn window_label(w: Option<i32>) -> String {
    match w {
        Some(days) => format!("{days}d"),
        None => "all".into(),
    }
}

fn event_family(ty: Option<EventType>) -> &'static str {
    match ty {
        Some(EventType::ProgressUpdate) => "estados_investigacion",
        _ => "moves",
    }
}

/// Ordered column set shared by every vector from one extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    names: Vec<String>,
    groups: Vec<FeatureGroup>,
    families: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureSchema {
    fn from_columns(columns: Vec<(String, FeatureGroup, String)>) -> FeatureSchema {
        let mut names = Vec::with_capacity(columns.len());
        let mut groups = Vec::with_capacity(columns.len());
        let mut families = Vec::with_capacity(columns.len());
        for (n, g, f) in columns {
            names.push(n);
            groups.push(g);
            families.push(f);
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        FeatureSchema { names, groups, families, index }
    }

    /// Schema for columns that carry no group information.
    pub fn plain(names: Vec<String>) -> FeatureSchema {
        let cols = names
            .into_iter()
            .map(|n| (n, FeatureGroup::CaseLevel, "other".to_string()))
            .collect();
        FeatureSchema::from_columns(cols)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn group_of(&self) -> HashMap<String, String> {
        self.names
            .iter()
            .zip(&self.groups)
            .map(|(n, g)| (n.clone(), g.as_str().to_string()))
            .collect()
    }

    pub fn family_of(&self) -> HashMap<String, String> {
        self.names.iter().cloned().zip(self.families.iter().cloned()).collect()
    }

    /// Hex SHA-256 over the newline-joined column names.
    pub fn hash(&self) -> String {
        schema_hash(&self.names)
    }
}

pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub case_id: String,
    pub as_of: Day,
    pub values: Vec<f64>,
    pub schema: Arc<FeatureSchema>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.schema.position(name).map(|i| self.values[i])
    }

    pub fn names(&self) -> &[String] {
        self.schema.names()
    }
}

/// One feature group's worth of named values for a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub group: FeatureGroup,
    pub entries: Vec<(String, f64)>,
}

impl FeatureBlock {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Crime categories kept as one-hot columns; the rest share `OTHER`.
    pub top_categories: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { top_categories: 40 }
    }
}

fn count_in(dates: &[Day], as_of: Day, window: Option<i32>) -> usize {
    let upto = dates.partition_point(|d| *d <= as_of);
    match window {
        Some(w) => upto - dates.partition_point(|d| *d <= as_of.minus(w)),
        None => upto,
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct LawyerTrack {
    assigned: Vec<Day>,
    closed: Vec<Day>,
    transferred: Vec<Day>,
    load_dates: Vec<Day>,
    load_prefix: Vec<i64>,
}

impl LawyerTrack {
    fn caseload(&self, at: Day) -> i64 {
        let n = self.load_dates.partition_point(|d| *d <= at);
        if n == 0 {
            0
        } else {
            self.load_prefix[n - 1]
        }
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct UnitTrack {
    entered: Vec<Day>,
    closed: Vec<Day>,
    transferred_out: Vec<Day>,
}

impl UnitTrack {
    fn open_at(&self, t: Day) -> usize {
        count_in(&self.entered, t, None) - count_in(&self.closed, t, None) - count_in(&self.transferred_out, t, None)
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct CrimeTrack {
    opened: Vec<Day>,
    closed: Vec<Day>,
    event_dates: Vec<Day>,
}

/// Sorted activity timelines per lawyer, unit and crime category.
#[derive(Debug, Default)]
pub struct ActivityIndex {
    lawyers: HashMap<String, LawyerTrack>,
    units: [UnitTrack; 5],
    crimes: HashMap<String, CrimeTrack>,
}

impl ActivityIndex {
    pub fn build(store: &CaseStore) -> ActivityIndex {
        let mut lawyers: HashMap<String, LawyerTrack> = HashMap::new();
        let mut deltas: HashMap<String, Vec<(Day, i64)>> = HashMap::new();
        let mut units: [UnitTrack; 5] = Default::default();
        let mut crimes: HashMap<String, CrimeTrack> = HashMap::new();
        for idx in 0..store.len() {
            let case = store.case(idx);
            let events = store.events_of(idx);
            let mut current: Option<&str> = None;
            for e in events {
                if current != Some(e.actor_lawyer.as_str()) && !e.actor_lawyer.is_empty() {
                    if let Some(prev) = current {
                        deltas.entry(prev.to_string()).or_default().push((e.occurred_at, -1));
                    }
                    deltas.entry(e.actor_lawyer.clone()).or_default().push((e.occurred_at, 1));
                    lawyers.entry(e.actor_lawyer.clone()).or_default().assigned.push(e.occurred_at);
                    current = Some(e.actor_lawyer.as_str());
                }
                if e.event_type == EventType::UnitTransfer && !e.actor_lawyer.is_empty() {
                    lawyers.entry(e.actor_lawyer.clone()).or_default().transferred.push(e.occurred_at);
                }
            }
            if let (Some(closed), Some(last)) = (case.closed_at, current) {
                deltas.entry(last.to_string()).or_default().push((closed, -1));
                lawyers.entry(last.to_string()).or_default().closed.push(closed);
            }
            for span in store.spans_of(idx) {
                let track = &mut units[span.unit.index()];
                track.entered.push(span.entered);
                match span.left {
                    Some((d, UnitExit::Closed)) => track.closed.push(d),
                    Some((d, UnitExit::Transfer(_))) => track.transferred_out.push(d),
                    None => {}
                }
            }
            let crime = crimes.entry(case.crime_category.clone()).or_default();
            crime.opened.push(case.opened_at);
            if let Some(c) = case.closed_at {
                crime.closed.push(c);
            }
            crime.event_dates.extend(events.iter().map(|e| e.occurred_at));
        }
        for (name, mut ds) in deltas {
            ds.sort_by_key(|(d, _)| *d);
            let track = lawyers.entry(name).or_default();
            let mut acc = 0i64;
            for (d, delta) in ds {
                acc += delta;
                if track.load_dates.last() == Some(&d) {
                    *track.load_prefix.last_mut().expect("parallel vectors") = acc;
                } else {
                    track.load_dates.push(d);
                    track.load_prefix.push(acc);
                }
            }
        }
        for t in lawyers.values_mut() {
            t.assigned.sort();
            t.closed.sort();
            t.transferred.sort();
        }
        for u in units.iter_mut() {
            u.entered.sort();
            u.closed.sort();
            u.transferred_out.sort();
        }
        for c in crimes.values_mut() {
            c.opened.sort();
            c.closed.sort();
            c.event_dates.sort();
        }
        ActivityIndex { lawyers, units, crimes }
    }
}

/// Dense ranking, largest value first; equal values share the better rank.
pub fn dense_rank_desc(values: &[f64]) -> Vec<u32> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    values
        .iter()
        .map(|v| distinct.iter().position(|d| d == v).expect("value present") as u32 + 1)
        .collect()
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct WindowStats {
    opened: f64,
    closed: f64,
    transferred: f64,
    ratio: f64,
    rank: f64,
}

/// Rankings and aggregates that depend on `as_of` only, shared by every
/// case scored on that date.
#[derive(Debug)]
pub struct AsOfContext {
    pub as_of: Day,
    lawyer_stats: HashMap<String, (f64, [WindowStats; 4])>,
    unit_stats: [(f64, [WindowStats; 4]); 5],
    crime_stats: HashMap<String, (f64, f64, [WindowStats; 4])>,
    crime_unranked: [f64; 4],
}

impl AsOfContext {
    fn build(activity: &ActivityIndex, as_of: Day) -> AsOfContext {
        let mut lawyer_stats = HashMap::new();
        let mut names: Vec<&String> = activity.lawyers.keys().collect();
        names.sort();
        let mut per_window_active: [Vec<(usize, f64)>; 4] = Default::default();
        let mut rows = Vec::with_capacity(names.len());
        for (li, name) in names.iter().enumerate() {
            let t = &activity.lawyers[*name];
            let load = t.caseload(as_of) as f64;
            let mut ws = [WindowStats::default(); 4];
            for (wi, w) in ACTIVITY_WINDOWS.iter().enumerate() {
                let s = &mut ws[wi];
                s.opened = count_in(&t.assigned, as_of, *w) as f64;
                s.closed = count_in(&t.closed, as_of, *w) as f64;
                s.transferred = count_in(&t.transferred, as_of, *w) as f64;
                s.ratio = ratio(s.closed, load + s.closed);
                if load > 0.0 || s.opened + s.closed + s.transferred > 0.0 {
                    per_window_active[wi].push((li, s.ratio));
                }
            }
            rows.push((load, ws));
        }
        for (wi, active) in per_window_active.iter().enumerate() {
            let ranks = dense_rank_desc(&active.iter().map(|(_, r)| *r).collect::<Vec<_>>());
            let unranked = ranks.iter().copied().max().unwrap_or(0) as f64 + 1.0;
            for ((li, _), r) in active.iter().zip(ranks) {
                rows[*li].1[wi].rank = r as f64;
            }
            for (li, row) in rows.iter_mut().enumerate() {
                if !active.iter().any(|(a, _)| *a == li) {
                    row.1[wi].rank = unranked;
                }
            }
        }
        for (name, row) in names.into_iter().zip(rows) {
            lawyer_stats.insert(name.clone(), row);
        }

        let mut unit_stats: [(f64, [WindowStats; 4]); 5] = Default::default();
        for u in Unit::ALL {
            let t = &activity.units[u.index()];
            let open = t.open_at(as_of) as f64;
            unit_stats[u.index()].0 = open;
            for (wi, w) in ACTIVITY_WINDOWS.iter().enumerate() {
                let s = &mut unit_stats[u.index()].1[wi];
                s.opened = count_in(&t.entered, as_of, *w) as f64;
                s.closed = count_in(&t.closed, as_of, *w) as f64;
                s.transferred = count_in(&t.transferred_out, as_of, *w) as f64;
                s.ratio = ratio(s.closed, open + s.closed);
            }
        }
        for wi in 0..4 {
            let closed: Vec<f64> = unit_stats.iter().map(|(_, ws)| ws[wi].closed).collect();
            for (u, r) in dense_rank_desc(&closed).into_iter().enumerate() {
                unit_stats[u].1[wi].rank = r as f64;
            }
        }

        let mut crime_names: Vec<&String> = activity
            .crimes
            .iter()
            .filter(|(_, t)| count_in(&t.opened, as_of, None) > 0)
            .map(|(k, _)| k)
            .collect();
        crime_names.sort();
        let mut crime_rows = Vec::with_capacity(crime_names.len());
        for name in &crime_names {
            let t = &activity.crimes[*name];
            let total = count_in(&t.opened, as_of, None) as f64;
            let closed_all = count_in(&t.closed, as_of, None) as f64;
            let open = total - closed_all;
            let events = count_in(&t.event_dates, as_of, None) as f64;
            let mut ws = [WindowStats::default(); 4];
            for (wi, w) in ACTIVITY_WINDOWS.iter().enumerate() {
                let s = &mut ws[wi];
                s.opened = count_in(&t.opened, as_of, *w) as f64;
                s.closed = count_in(&t.closed, as_of, *w) as f64;
                s.ratio = ratio(s.closed, open + s.closed);
            }
            crime_rows.push((open, ratio(events, total), ws));
        }
        let mut crime_unranked = [1.0; 4];
        for (wi, unranked) in crime_unranked.iter_mut().enumerate() {
            let closed: Vec<f64> = crime_rows.iter().map(|r| r.2[wi].closed).collect();
            let ranks = dense_rank_desc(&closed);
            *unranked = ranks.iter().copied().max().unwrap_or(0) as f64 + 1.0;
            for (row, r) in crime_rows.iter_mut().zip(ranks) {
                row.2[wi].rank = r as f64;
            }
        }
        let crime_stats = crime_names.into_iter().cloned().zip(crime_rows).collect();
        AsOfContext { as_of, lawyer_stats, unit_stats, crime_stats, crime_unranked }
    }
}

/// Column layout plus the crime one-hot vocabulary; computes vectors for any
/// `(case, as_of)` pair against one store.
pub struct FeatureExtractor<'a> {
    store: &'a CaseStore,
    activity: Arc<ActivityIndex>,
    schema: Arc<FeatureSchema>,
    vocab: HashMap<String, usize>,
}

const CASE_EVENT_TYPES: usize = 7;

impl<'a> FeatureExtractor<'a> {
    /// The one-hot vocabulary is the `top_categories` most frequent crime
    /// categories among cases opened on or before `vocab_as_of` (ties by code).
    pub fn new(store: &'a CaseStore, vocab_as_of: Day, config: FeatureConfig) -> FeatureExtractor<'a> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for c in store.cases() {
            if c.opened_at <= vocab_as_of {
                *freq.entry(c.crime_category.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let vocab_list: Vec<String> = ranked
            .into_iter()
            .take(config.top_categories)
            .map(|(c, _)| c.to_string())
            .collect();
        let schema = Arc::new(build_schema(&vocab_list));
        let vocab = vocab_list.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
        FeatureExtractor { store, activity: store.activity(), schema, vocab }
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn store(&self) -> &CaseStore {
        self.store
    }

    pub fn context(&self, as_of: Day) -> AsOfContext {
        AsOfContext::build(&self.activity, as_of)
    }

    /// Full vector for the case at `idx`.
    pub fn vector(&self, ctx: &AsOfContext, idx: usize) -> FeatureVector {
        let mut values = Vec::with_capacity(self.schema.len());
        self.push_case_level(ctx.as_of, idx, &mut values);
        self.push_milestones(ctx.as_of, idx, &mut values);
        let events = self.store.events_idx_as_of(idx, ctx.as_of);
        let lawyer = events.last().map(|e| e.actor_lawyer.as_str()).filter(|l| !l.is_empty());
        self.push_lawyer(ctx, lawyer, events, &mut values);
        let unit = self.store.unit_at_idx(idx, ctx.as_of).unwrap_or(self.store.case(idx).unit);
        self.push_unit(ctx, unit, &mut values);
        self.push_crime(ctx, &self.store.case(idx).crime_category, &mut values);
        debug_assert_eq!(values.len(), self.schema.len());
        FeatureVector {
            case_id: self.store.case(idx).case_id.clone(),
            as_of: ctx.as_of,
            values,
            schema: self.schema.clone(),
        }
    }

    fn case_idx(&self, case_id: &str) -> Result<usize> {
        self.store
            .case_index(case_id)
            .ok_or_else(|| TriageError::NotFound(format!("case {case_id}")))
    }

    fn block(&self, group: FeatureGroup, values: Vec<f64>) -> FeatureBlock {
        let entries = self
            .schema
            .names
            .iter()
            .zip(&self.schema.groups)
            .filter(|(_, g)| **g == group)
            .map(|(n, _)| n.clone())
            .zip(values)
            .collect();
        FeatureBlock { group, entries }
    }

    pub fn case_level(&self, case_id: &str, as_of: Day) -> Result<FeatureBlock> {
        let idx = self.case_idx(case_id)?;
        let mut v = Vec::new();
        self.push_case_level(as_of, idx, &mut v);
        Ok(self.block(FeatureGroup::CaseLevel, v))
    }

    pub fn milestones(&self, case_id: &str, as_of: Day) -> Result<FeatureBlock> {
        let idx = self.case_idx(case_id)?;
        let mut v = Vec::new();
        self.push_milestones(as_of, idx, &mut v);
        Ok(self.block(FeatureGroup::Milestones, v))
    }

    /// Lawyer block. With `case_id`, caseload is read at that case's latest
    /// event and the distinct-prosecutor count is filled in.
    pub fn lawyer_activity(&self, lawyer_id: &str, as_of: Day, case_id: Option<&str>) -> Result<FeatureBlock> {
        let ctx = self.context(as_of);
        let events = match case_id {
            Some(c) => self.store.events_idx_as_of(self.case_idx(c)?, as_of),
            None => &[],
        };
        let mut v = Vec::new();
        self.push_lawyer(&ctx, Some(lawyer_id).filter(|l| !l.is_empty()), events, &mut v);
        Ok(self.block(FeatureGroup::Lawyer, v))
    }

    pub fn unit_indicators(&self, unit: Unit, as_of: Day) -> FeatureBlock {
        let ctx = self.context(as_of);
        let mut v = Vec::new();
        self.push_unit(&ctx, unit, &mut v);
        self.block(FeatureGroup::Unit, v)
    }

    pub fn crime_aggregates(&self, category: &str, as_of: Day) -> FeatureBlock {
        let ctx = self.context(as_of);
        let mut v = Vec::new();
        self.push_crime(&ctx, category, &mut v);
        self.block(FeatureGroup::CrimeType, v)
    }

    fn push_case_level(&self, as_of: Day, idx: usize, out: &mut Vec<f64>) {
        let case = self.store.case(idx);
        let events = self.store.events_idx_as_of(idx, as_of);
        // [type][0 = total, 1..=4 = windows]; the last row aggregates all types
        let mut counts = [[0u32; 5]; CASE_EVENT_TYPES + 1];
        for e in events {
            let age = as_of.days_since(e.occurred_at);
            let ti = e.event_type.index();
            let rows: &[usize] = if ti < CASE_EVENT_TYPES { &[ti, CASE_EVENT_TYPES] } else { &[CASE_EVENT_TYPES] };
            for &r in rows {
                counts[r][0] += 1;
                for (wi, w) in CASE_WINDOWS.iter().enumerate() {
                    if age < *w {
                        counts[r][wi + 1] += 1;
                    }
                }
            }
        }
        for row in counts.iter() {
            out.push(row[0] as f64);
            for wi in 0..4 {
                out.push(row[wi + 1] as f64);
            }
            for (wi, w) in CASE_WINDOWS.iter().enumerate() {
                out.push(row[wi + 1] as f64 / *w as f64 * 30.0);
            }
        }
        out.push(as_of.days_since(case.opened_at) as f64);
        let last = events.last().map(|e| e.occurred_at).unwrap_or(case.opened_at);
        out.push(as_of.days_since(last) as f64);
        match case.crime_date {
            Some(cd) => {
                out.push(case.opened_at.days_since(cd) as f64);
                out.push(0.0);
            }
            None => {
                out.push(0.0);
                out.push(1.0);
            }
        }
        out.push(as_of.days_since(current_lawyer_since(events).unwrap_or(case.opened_at)) as f64);
        out.push(if case.arrested_at_intake { 1.0 } else { 0.0 });
        let n = self.vocab.len();
        let start = out.len();
        out.resize(start + n + 1, 0.0);
        let slot = self.vocab.get(&case.crime_category).copied().unwrap_or(n);
        out[start + slot] = 1.0;
    }

    fn push_milestones(&self, as_of: Day, idx: usize, out: &mut Vec<f64>) {
        let events = self.store.events_idx_as_of(idx, as_of);
        let mut counts = [[0u32; 5]; 7];
        for e in events {
            if let EventType::Milestone(m) = e.event_type {
                let age = as_of.days_since(e.occurred_at);
                let row = &mut counts[m as usize];
                row[0] += 1;
                for (wi, w) in CASE_WINDOWS.iter().enumerate() {
                    if age < *w {
                        row[wi + 1] += 1;
                    }
                }
            }
        }
        for row in counts.iter() {
            out.push(if row[0] > 0 { 1.0 } else { 0.0 });
            out.extend(row.iter().map(|c| *c as f64));
        }
    }

    fn push_lawyer(&self, ctx: &AsOfContext, lawyer: Option<&str>, events: &[ProceduralEvent], out: &mut Vec<f64>) {
        let stats = lawyer.and_then(|l| ctx.lawyer_stats.get(l).map(|s| (l, s)));
        match stats {
            Some((l, (load_now, ws))) => {
                let at = events.last().map(|e| e.occurred_at).unwrap_or(ctx.as_of);
                let load = if events.is_empty() {
                    *load_now
                } else {
                    self.activity.lawyers[l].caseload(at) as f64
                };
                out.push(load);
                for s in ws.iter() {
                    out.extend([s.opened, s.closed, s.transferred, s.ratio, s.rank]);
                }
                out.push(distinct_actors(events) as f64);
                out.push(0.0);
            }
            None => {
                out.push(0.0);
                out.extend(std::iter::repeat_n(0.0, 5 * ACTIVITY_WINDOWS.len()));
                out.push(distinct_actors(events) as f64);
                out.push(1.0);
            }
        }
    }

    fn push_unit(&self, ctx: &AsOfContext, unit: Unit, out: &mut Vec<f64>) {
        for u in Unit::ALL {
            out.push(if u == unit { 1.0 } else { 0.0 });
        }
        let (open, ws) = &ctx.unit_stats[unit.index()];
        out.push(*open);
        for s in ws.iter() {
            out.extend([s.opened, s.closed, s.transferred, s.ratio, s.rank]);
        }
    }

    fn push_crime(&self, ctx: &AsOfContext, category: &str, out: &mut Vec<f64>) {
        match ctx.crime_stats.get(category) {
            Some((open, mean_events, ws)) => {
                out.push(*open);
                out.push(*mean_events);
                for s in ws.iter() {
                    out.extend([s.opened, s.closed, s.ratio, s.rank]);
                }
            }
            None => {
                out.extend([0.0, 0.0]);
                for wi in 0..4 {
                    out.extend([0.0, 0.0, 0.0, ctx.crime_unranked[wi]]);
                }
            }
        }
    }
}

fn distinct_actors(events: &[ProceduralEvent]) -> usize {
    let mut actors: Vec<&str> = events.iter().map(|e| e.actor_lawyer.as_str()).filter(|a| !a.is_empty()).collect();
    actors.sort_unstable();
    actors.dedup();
    actors.len()
}

/// First day of the trailing run of events handled by the latest actor.
fn current_lawyer_since(events: &[ProceduralEvent]) -> Option<Day> {
    let last = events.last()?;
    let mut since = last.occurred_at;
    for e in events.iter().rev() {
        if e.actor_lawyer != last.actor_lawyer {
            break;
        }
        since = e.occurred_at;
    }
    Some(since)
}

fn build_schema(vocab: &[String]) -> FeatureSchema {
    let mut cols: Vec<(String, FeatureGroup, String)> = Vec::new();
    let mut add = |name: String, group: FeatureGroup, family: &str| cols.push((name, group, family.to_string()));
    let case_types: Vec<Option<EventType>> = EventType::BASE.iter().copied().map(Some).chain([None]).collect();
    for ty in &case_types {
        let stem = match ty {
            Some(t) => t.name(),
            None => "all".to_string(),
        };
        let fam = event_family(*ty);
        add(format!("events.{stem}.total"), FeatureGroup::CaseLevel, fam);
        for w in CASE_WINDOWS {
            add(format!("events.{stem}.count_{w}d"), FeatureGroup::CaseLevel, fam);
        }
        for w in CASE_WINDOWS {
            add(format!("events.{stem}.rate_{w}d"), FeatureGroup::CaseLevel, fam);
        }
    }
    add("days_since_open".into(), FeatureGroup::CaseLevel, "days_since_open");
    add("days_since_last_event".into(), FeatureGroup::CaseLevel, "days_since_last_event");
    add("days_crime_to_report".into(), FeatureGroup::CaseLevel, "days_crime_to_report");
    add("days_crime_to_report.is_missing".into(), FeatureGroup::CaseLevel, "days_crime_to_report");
    add("days_with_current_lawyer".into(), FeatureGroup::CaseLevel, "days_with_current_lawyer");
    add("arrested_at_intake".into(), FeatureGroup::CaseLevel, "arrested_at_intake");
    for c in vocab {
        add(format!("crime_category.{c}"), FeatureGroup::CaseLevel, "crime_category");
    }
    add("crime_category.OTHER".into(), FeatureGroup::CaseLevel, "crime_category");

    for m in Milestone::ALL {
        let stem = format!("milestone.{}", m.as_str());
        add(format!("{stem}.ever"), FeatureGroup::Milestones, "milestones");
        add(format!("{stem}.total"), FeatureGroup::Milestones, "milestones");
        for w in CASE_WINDOWS {
            add(format!("{stem}.count_{w}d"), FeatureGroup::Milestones, "milestones");
        }
    }

    add("lawyer.active_caseload".into(), FeatureGroup::Lawyer, "lawyer");
    for w in ACTIVITY_WINDOWS {
        let wl = window_label(w);
        for stat in ["opened", "closed", "transferred", "closure_ratio", "rank"] {
            add(format!("lawyer.{stat}_{wl}"), FeatureGroup::Lawyer, "lawyer");
        }
    }
    add("lawyer.distinct_prosecutors".into(), FeatureGroup::Lawyer, "lawyer");
    add("lawyer.is_missing".into(), FeatureGroup::Lawyer, "lawyer");

    for u in Unit::ALL {
        add(format!("unit.is_{u}"), FeatureGroup::Unit, "unit");
    }
    add("unit.open_now".into(), FeatureGroup::Unit, "unit");
    for w in ACTIVITY_WINDOWS {
        let wl = window_label(w);
        for stat in ["entered", "closed", "transferred_out", "closure_ratio", "rank"] {
            add(format!("unit.{stat}_{wl}"), FeatureGroup::Unit, "unit");
        }
    }

    add("crime.open_now".into(), FeatureGroup::CrimeType, "crime_type");
    add("crime.mean_events_per_case".into(), FeatureGroup::CrimeType, "crime_type");
    for w in ACTIVITY_WINDOWS {
        let wl = window_label(w);
        for stat in ["opened", "closed", "closure_ratio", "rank"] {
            add(format!("crime.{stat}_{wl}"), FeatureGroup::CrimeType, "crime_type");
        }
    }
    FeatureSchema::from_columns(cols)
}

/// One vector per case open in `unit` at `as_of`, in case-id order.
pub fn assemble(store: &CaseStore, unit: Unit, as_of: Day) -> Vec<FeatureVector> {
    let ext = FeatureExtractor::new(store, as_of, FeatureConfig::default());
    assemble_with(&ext, unit, as_of)
}

pub fn assemble_with(ext: &FeatureExtractor<'_>, unit: Unit, as_of: Day) -> Vec<FeatureVector> {
    let ctx = ext.context(as_of);
    let idxs = ext.store.open_case_indices(unit, as_of);
    par::map(&idxs, |&i| ext.vector(&ctx, i))
}

/// Writes vectors as CSV: `case_id, as_of`, then one column per feature.
pub fn write_csv(path: &std::path::Path, vectors: &[FeatureVector], schema: &FeatureSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["case_id".to_string(), "as_of".to_string()];
    header.extend(schema.names().iter().cloned());
    w.write_record(&header).map_err(|e| TriageError::Internal(e.to_string()))?;
    for v in vectors {
        let mut row = vec![v.case_id.clone(), v.as_of.to_string()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| TriageError::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| TriageError::io(path, e))
}
