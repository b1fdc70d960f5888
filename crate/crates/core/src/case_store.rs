//! Case register and procedural event log.
//!
//! A [`CaseStore`] is built once at ingestion and never mutated afterwards.
//! Two flat files describe it:
//!
//! `cases.csv`, one row per case:
//!
//! | column | content |
//! |---|---|
//! | `case_id` | opaque identifier, unique |
//! | `opened_at` | ISO-8601 date |
//! | `crime_category` | category code |
//! | `municipality` | municipality code |
//! | `unit` | intake unit: `MAT`, `UTMC`, `UIE`, `OEMASC` or `UID` |
//! | `lawyer_id` | prosecutor assigned at extraction time |
//! | `arrested_at_intake` | `true`/`false` (also `1`/`0`) |
//! | `closed_at` | ISO-8601 date, empty while open |
//! | `closure_kind` | `administrative_closure`, `alternative_mechanism`, `transfer_out`, `judicial_resolution`; empty while open |
//! | `crime_date` | ISO-8601 date of the reported offense, may be empty |
//!
//! `events.csv`, one row per event: `case_id, seq, event_type, occurred_at,
//! actor_lawyer, from_unit, to_unit`. `from_unit`/`to_unit` are filled only
//! for `unit_transfer`. Milestones are written `milestone:<kind>`.
//!
//! The JSONL variant carries the same fields, one JSON object per line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::date::Day;
use crate::error::{Result, TriageError};
use crate::features::ActivityIndex;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = TriageError;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(TriageError::Data(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Mat,
    Utmc,
    Uie,
    Oemasc,
    Uid,
}

string_enum!(Unit { Mat => "MAT", Utmc => "UTMC", Uie => "UIE", Oemasc => "OEMASC", Uid => "UID" });

impl Unit {
    pub const ALL: [Unit; 5] = [Unit::Mat, Unit::Utmc, Unit::Uie, Unit::Oemasc, Unit::Uid];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClosureKind {
    AdministrativeClosure,
    AlternativeMechanism,
    TransferOut,
    JudicialResolution,
}

string_enum!(ClosureKind {
    AdministrativeClosure => "administrative_closure",
    AlternativeMechanism => "alternative_mechanism",
    TransferOut => "transfer_out",
    JudicialResolution => "judicial_resolution",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Milestone {
    Judicialization,
    PreventiveDetention,
    JudicialAuthorization,
    ArrestWarrant,
    ConciliationReferral,
    VinculacionAProceso,
    AlternativeMechanism,
}

string_enum!(Milestone {
    Judicialization => "judicialization",
    PreventiveDetention => "preventive_detention",
    JudicialAuthorization => "judicial_authorization",
    ArrestWarrant => "arrest_warrant",
    ConciliationReferral => "conciliation_referral",
    VinculacionAProceso => "vinculacion_a_proceso",
    AlternativeMechanism => "alternative_mechanism",
});

impl Milestone {
    pub const ALL: [Milestone; 7] = [
        Milestone::Judicialization,
        Milestone::PreventiveDetention,
        Milestone::JudicialAuthorization,
        Milestone::ArrestWarrant,
        Milestone::ConciliationReferral,
        Milestone::VinculacionAProceso,
        Milestone::AlternativeMechanism,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    Initialized,
    ProgressUpdate,
    UnitTransfer,
    SearchWarrant,
    SuspectUpdate,
    PartyUpdate,
    Closure,
    Milestone(Milestone),
}

impl EventType {
    /// Number of distinct event types, milestones included.
    pub const COUNT: usize = 14;

    pub const BASE: [EventType; 7] = [
        EventType::Initialized,
        EventType::ProgressUpdate,
        EventType::UnitTransfer,
        EventType::SearchWarrant,
        EventType::SuspectUpdate,
        EventType::PartyUpdate,
        EventType::Closure,
    ];

    /// Dense index in `0..COUNT`; base types first, then milestones.
    pub fn index(self) -> usize {
        match self {
            EventType::Initialized => 0,
            EventType::ProgressUpdate => 1,
            EventType::UnitTransfer => 2,
            EventType::SearchWarrant => 3,
            EventType::SuspectUpdate => 4,
            EventType::PartyUpdate => 5,
            EventType::Closure => 6,
            EventType::Milestone(m) => 7 + m as usize,
        }
    }

    pub fn name(self) -> String {
        match self {
            EventType::Initialized => "initialized".into(),
            EventType::ProgressUpdate => "progress_update".into(),
            EventType::UnitTransfer => "unit_transfer".into(),
            EventType::SearchWarrant => "search_warrant".into(),
            EventType::SuspectUpdate => "suspect_update".into(),
            EventType::PartyUpdate => "party_update".into(),
            EventType::Closure => "closure".into(),
            EventType::Milestone(m) => format!("milestone:{}", m.as_str()),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for EventType {
    type Err = TriageError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(m) = s.strip_prefix("milestone:") {
            return Ok(EventType::Milestone(m.parse()?));
        }
        Ok(match s {
            "initialized" => EventType::Initialized,
            "progress_update" => EventType::ProgressUpdate,
            "unit_transfer" => EventType::UnitTransfer,
            "search_warrant" => EventType::SearchWarrant,
            "suspect_update" => EventType::SuspectUpdate,
            "party_update" => EventType::PartyUpdate,
            "closure" => EventType::Closure,
            other => return Err(TriageError::Data(format!("unknown event type {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub case_id: String,
    pub opened_at: Day,
    pub crime_category: String,
    pub municipality: String,
    /// Intake unit.
    pub unit: Unit,
    pub lawyer_id: String,
    pub arrested_at_intake: bool,
    pub closed_at: Option<Day>,
    pub closure_kind: Option<ClosureKind>,
    pub crime_date: Option<Day>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProceduralEvent {
    pub case_id: String,
    pub seq: u32,
    pub event_type: EventType,
    pub occurred_at: Day,
    pub actor_lawyer: String,
    pub from_unit: Option<Unit>,
    pub to_unit: Option<Unit>,
}

/// How a case left a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitExit {
    Transfer(Unit),
    Closed,
}

/// One stay of a case in a unit: `[entered, left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitSpan {
    pub unit: Unit,
    pub entered: Day,
    pub left: Option<(Day, UnitExit)>,
}

/// A row that failed validation and was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowReject {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FromStr for FileFormat {
    type Err = TriageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "jsonl" => Ok(FileFormat::Jsonl),
            other => Err(TriageError::Config(format!("unknown file format {other:?}"))),
        }
    }
}

impl FileFormat {
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub opened_at: String,
    pub crime_category: String,
    pub municipality: String,
    pub unit: String,
    pub lawyer_id: String,
    pub arrested_at_intake: String,
    #[serde(default)]
    pub closed_at: Option<String>,
    #[serde(default)]
    pub closure_kind: Option<String>,
    #[serde(default)]
    pub crime_date: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub case_id: String,
    pub seq: String,
    pub event_type: String,
    pub occurred_at: String,
    pub actor_lawyer: String,
    #[serde(default)]
    pub from_unit: Option<String>,
    #[serde(default)]
    pub to_unit: Option<String>,
}

fn non_empty(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" | "" => Ok(false),
        other => Err(TriageError::Data(format!("invalid boolean {other:?}"))),
    }
}

impl CaseRow {
    pub fn parse(&self) -> Result<CaseRecord> {
        if self.case_id.trim().is_empty() {
            return Err(TriageError::Data("empty case_id".into()));
        }
        let closed_at = non_empty(&self.closed_at).map(str::parse).transpose()?;
        let closure_kind = non_empty(&self.closure_kind).map(str::parse).transpose()?;
        if closed_at.is_some() != closure_kind.is_some() {
            return Err(TriageError::Data(
                "closed_at and closure_kind must be both present or both empty".into(),
            ));
        }
        Ok(CaseRecord {
            case_id: self.case_id.trim().to_string(),
            opened_at: self.opened_at.parse()?,
            crime_category: self.crime_category.trim().to_string(),
            municipality: self.municipality.trim().to_string(),
            unit: self.unit.parse()?,
            lawyer_id: self.lawyer_id.trim().to_string(),
            arrested_at_intake: parse_bool(&self.arrested_at_intake)?,
            closed_at,
            closure_kind,
            crime_date: non_empty(&self.crime_date).map(str::parse).transpose()?,
        })
    }

    pub fn from_record(c: &CaseRecord) -> CaseRow {
        CaseRow {
            case_id: c.case_id.clone(),
            opened_at: c.opened_at.to_string(),
            crime_category: c.crime_category.clone(),
            municipality: c.municipality.clone(),
            unit: c.unit.to_string(),
            lawyer_id: c.lawyer_id.clone(),
            arrested_at_intake: c.arrested_at_intake.to_string(),
            closed_at: c.closed_at.map(|d| d.to_string()),
            closure_kind: c.closure_kind.map(|k| k.to_string()),
            crime_date: c.crime_date.map(|d| d.to_string()),
        }
    }
}

impl EventRow {
    pub fn parse(&self) -> Result<ProceduralEvent> {
        let seq = self
            .seq
            .trim()
            .parse::<u32>()
            .map_err(|e| TriageError::Data(format!("invalid seq {:?}: {e}", self.seq)))?;
        let event_type: EventType = self.event_type.parse()?;
        let from_unit = non_empty(&self.from_unit).map(str::parse::<Unit>).transpose()?;
        let to_unit = non_empty(&self.to_unit).map(str::parse::<Unit>).transpose()?;
        let is_transfer = event_type == EventType::UnitTransfer;
        match (is_transfer, from_unit, to_unit) {
            (true, Some(f), Some(t)) if f != t => {}
            (true, Some(_), Some(_)) => {
                return Err(TriageError::Data("unit_transfer with from_unit == to_unit".into()))
            }
            (true, _, _) => {
                return Err(TriageError::Data("unit_transfer requires from_unit and to_unit".into()))
            }
            (false, None, None) => {}
            (false, _, _) => {
                return Err(TriageError::Data(format!(
                    "from_unit/to_unit only allowed on unit_transfer, found on {event_type}"
                )))
            }
        }
        Ok(ProceduralEvent {
            case_id: self.case_id.trim().to_string(),
            seq,
            event_type,
            occurred_at: self.occurred_at.parse()?,
            actor_lawyer: self.actor_lawyer.trim().to_string(),
            from_unit,
            to_unit,
        })
    }

    pub fn from_event(e: &ProceduralEvent) -> EventRow {
        EventRow {
            case_id: e.case_id.clone(),
            seq: e.seq.to_string(),
            event_type: e.event_type.to_string(),
            occurred_at: e.occurred_at.to_string(),
            actor_lawyer: e.actor_lawyer.clone(),
            from_unit: e.from_unit.map(|u| u.to_string()),
            to_unit: e.to_unit.map(|u| u.to_string()),
        }
    }
}

/// Immutable case register with per-case event histories.
#[derive(Debug)]
pub struct CaseStore {
    cases: Vec<CaseRecord>,
    events: Vec<Vec<ProceduralEvent>>,
    spans: Vec<Vec<UnitSpan>>,
    index: HashMap<String, usize>,
    extraction_date: Day,
    rejects: Vec<RowReject>,
    activity: OnceLock<Arc<ActivityIndex>>,
}

impl Clone for CaseStore {
    fn clone(&self) -> Self {
        CaseStore {
            cases: self.cases.clone(),
            events: self.events.clone(),
            spans: self.spans.clone(),
            index: self.index.clone(),
            extraction_date: self.extraction_date,
            rejects: self.rejects.clone(),
            activity: OnceLock::new(),
        }
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(
    path: &Path,
    format: FileFormat,
) -> Result<Vec<(u64, std::result::Result<T, String>)>> {
    if !path.exists() {
        return Err(TriageError::MissingPath(path.to_path_buf()));
    }
    let mut out = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(false)
                .from_path(path)
                .map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
            let headers = reader
                .headers()
                .map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?
                .clone();
            let mut record = csv::StringRecord::new();
            loop {
                match reader.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {
                        let line = record.position().map(|p| p.line()).unwrap_or(0);
                        let parsed = record.deserialize::<T>(Some(&headers)).map_err(|e| e.to_string());
                        out.push((line, parsed));
                    }
                    Err(e) => {
                        let line = e.position().map(|p| p.line()).unwrap_or(0);
                        out.push((line, Err(e.to_string())));
                    }
                }
            }
        }
        FileFormat::Jsonl => {
            let file = fs::File::open(path).map_err(|e| TriageError::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| TriageError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(((i + 1) as u64, serde_json::from_str::<T>(&line).map_err(|e| e.to_string())));
            }
        }
    }
    Ok(out)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl CaseStore {
    /// Loads `cases` and `events` files. Malformed rows are collected in
    /// [`CaseStore::rejects`]; structural violations are hard errors.
    pub fn ingest(cases_path: &Path, events_path: &Path, format: FileFormat) -> Result<CaseStore> {
        let mut rejects = Vec::new();
        let mut cases = Vec::new();
        let mut seen = HashSet::new();
        let cases_label = file_label(cases_path);
        for (line, row) in read_rows::<CaseRow>(cases_path, format)? {
            let parsed = row.map_err(TriageError::Data).and_then(|r| r.parse());
            match parsed {
                Ok(c) if !seen.insert(c.case_id.clone()) => rejects.push(RowReject {
                    file: cases_label.clone(),
                    line,
                    reason: format!("duplicate case_id {}", c.case_id),
                }),
                Ok(c) => cases.push(c),
                Err(e) => rejects.push(RowReject { file: cases_label.clone(), line, reason: e.to_string() }),
            }
        }
        let mut events = Vec::new();
        let mut seen_seq = HashSet::new();
        let events_label = file_label(events_path);
        for (line, row) in read_rows::<EventRow>(events_path, format)? {
            let parsed = row.map_err(TriageError::Data).and_then(|r| r.parse());
            match parsed {
                Ok(e) if !seen_seq.insert((e.case_id.clone(), e.seq)) => rejects.push(RowReject {
                    file: events_label.clone(),
                    line,
                    reason: format!("duplicate (case_id, seq) = ({}, {})", e.case_id, e.seq),
                }),
                Ok(e) => events.push(e),
                Err(e) => rejects.push(RowReject { file: events_label.clone(), line, reason: e.to_string() }),
            }
        }
        let mut store = CaseStore::from_parts(cases, events, None)?;
        store.rejects = rejects;
        Ok(store)
    }

    /// Builds a store from already-parsed records, validating every invariant.
    /// `extraction_date` defaults to the latest date mentioned anywhere.
    pub fn from_parts(
        mut cases: Vec<CaseRecord>,
        events: Vec<ProceduralEvent>,
        extraction_date: Option<Day>,
    ) -> Result<CaseStore> {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let mut index = HashMap::with_capacity(cases.len());
        for (i, c) in cases.iter().enumerate() {
            if index.insert(c.case_id.clone(), i).is_some() {
                return Err(TriageError::Data(format!("duplicate case_id {}", c.case_id)));
            }
            if c.closed_at.is_some() != c.closure_kind.is_some() {
                return Err(TriageError::Data(format!(
                    "case {}: closed_at and closure_kind must be both present or both empty",
                    c.case_id
                )));
            }
        }
        let mut per_case: Vec<Vec<ProceduralEvent>> = vec![Vec::new(); cases.len()];
        for e in events {
            let Some(&i) = index.get(&e.case_id) else {
                return Err(TriageError::Data(format!("event seq {} references unknown case {}", e.seq, e.case_id)));
            };
            per_case[i].push(e);
        }
        let mut spans = Vec::with_capacity(cases.len());
        let mut latest = Day(i32::MIN);
        for (case, evs) in cases.iter().zip(per_case.iter_mut()) {
            evs.sort_by_key(|e| (e.occurred_at, e.seq));
            for w in evs.windows(2) {
                if w[0].seq == w[1].seq {
                    return Err(TriageError::Data(format!("case {}: duplicate seq {}", case.case_id, w[0].seq)));
                }
            }
            spans.push(validate_case(case, evs)?);
            latest = latest.max(case.opened_at);
            if let Some(c) = case.closed_at {
                latest = latest.max(c);
            }
            if let Some(last) = evs.last() {
                latest = latest.max(last.occurred_at);
            }
        }
        let extraction_date = match extraction_date {
            Some(d) if d < latest && !cases.is_empty() => {
                return Err(TriageError::Data(format!(
                    "extraction date {d} precedes recorded activity on {latest}"
                )))
            }
            Some(d) => d,
            None if cases.is_empty() => Day(0),
            None => latest,
        };
        Ok(CaseStore {
            cases,
            events: per_case,
            spans,
            index,
            extraction_date,
            rejects: Vec::new(),
            activity: OnceLock::new(),
        })
    }

    pub fn empty(extraction_date: Day) -> CaseStore {
        CaseStore::from_parts(Vec::new(), Vec::new(), Some(extraction_date)).expect("empty store is valid")
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn case(&self, idx: usize) -> &CaseRecord {
        &self.cases[idx]
    }

    pub fn case_index(&self, case_id: &str) -> Option<usize> {
        self.index.get(case_id).copied()
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.case_index(case_id).map(|i| &self.cases[i])
    }

    pub fn events_of(&self, idx: usize) -> &[ProceduralEvent] {
        &self.events[idx]
    }

    pub fn spans_of(&self, idx: usize) -> &[UnitSpan] {
        &self.spans[idx]
    }

    pub fn extraction_date(&self) -> Day {
        self.extraction_date
    }

    pub fn rejects(&self) -> &[RowReject] {
        &self.rejects
    }

    /// Earliest opening date in the store.
    pub fn first_date(&self) -> Option<Day> {
        self.cases.iter().map(|c| c.opened_at).min()
    }

    pub(crate) fn activity(&self) -> Arc<ActivityIndex> {
        self.activity.get_or_init(|| Arc::new(ActivityIndex::build(self))).clone()
    }

    /// Events with `occurred_at <= as_of`, in (date, seq) order.
    pub fn events_as_of(&self, case_id: &str, as_of: Day) -> Result<&[ProceduralEvent]> {
        let idx = self
            .case_index(case_id)
            .ok_or_else(|| TriageError::NotFound(format!("case {case_id}")))?;
        Ok(self.events_idx_as_of(idx, as_of))
    }

    pub(crate) fn events_idx_as_of(&self, idx: usize, as_of: Day) -> &[ProceduralEvent] {
        let evs = &self.events[idx];
        let n = evs.partition_point(|e| e.occurred_at <= as_of);
        &evs[..n]
    }

    /// Whether the case is open (opened, not yet closed) at the end of `as_of`.
    pub fn is_open_idx(&self, idx: usize, as_of: Day) -> bool {
        let c = &self.cases[idx];
        c.opened_at <= as_of && c.closed_at.is_none_or(|closed| closed > as_of)
    }

    /// The unit holding the case at the end of `as_of`, if the case is open.
    pub fn unit_at_idx(&self, idx: usize, as_of: Day) -> Option<Unit> {
        self.current_span(idx, as_of).map(|s| s.unit)
    }

    pub fn current_span(&self, idx: usize, as_of: Day) -> Option<&UnitSpan> {
        if !self.is_open_idx(idx, as_of) {
            return None;
        }
        let spans = &self.spans[idx];
        let n = spans.partition_point(|s| s.entered <= as_of);
        spans[..n].last()
    }

    /// Date on which the case leaves the unit it holds at `as_of`, when that
    /// happens within `(as_of, as_of + horizon]`.
    pub fn finalized_within(&self, idx: usize, as_of: Day, horizon: i32) -> Option<Day> {
        let span = self.current_span(idx, as_of)?;
        match span.left {
            Some((d, _)) if d > as_of && d <= as_of.plus(horizon) => Some(d),
            _ => None,
        }
    }

    /// Indices of the cases open in `unit` at `as_of`, ascending.
    pub fn open_case_indices(&self, unit: Unit, as_of: Day) -> Vec<usize> {
        (0..self.cases.len())
            .filter(|&i| self.unit_at_idx(i, as_of) == Some(unit))
            .collect()
    }

    /// Indices of cases open in any unit at `as_of`.
    pub fn open_any_indices(&self, as_of: Day) -> Vec<usize> {
        (0..self.cases.len()).filter(|&i| self.is_open_idx(i, as_of)).collect()
    }

    pub fn open_cases(&self, unit: Unit, as_of: Day) -> BTreeSet<String> {
        self.open_case_indices(unit, as_of)
            .into_iter()
            .map(|i| self.cases[i].case_id.clone())
            .collect()
    }

    /// The store as it would have looked on `as_of`: later cases and events
    /// are dropped, later closures are undone.
    pub fn truncate(&self, as_of: Day) -> CaseStore {
        let mut cases = Vec::new();
        let mut events = Vec::new();
        for (i, c) in self.cases.iter().enumerate() {
            if c.opened_at > as_of {
                continue;
            }
            let evs = self.events_idx_as_of(i, as_of);
            let mut c = c.clone();
            if c.closed_at.is_some_and(|d| d > as_of) {
                c.closed_at = None;
                c.closure_kind = None;
            }
            if let Some(last) = evs.last() {
                c.lawyer_id = last.actor_lawyer.clone();
            }
            cases.push(c);
            events.extend(evs.iter().cloned());
        }
        CaseStore::from_parts(cases, events, Some(as_of.min(self.extraction_date)))
            .expect("truncation preserves invariants")
    }

    /// Replaces the history of a case; used by synthetic generators.
    pub fn with_replaced(&self, replacements: Vec<(CaseRecord, Vec<ProceduralEvent>)>) -> Result<CaseStore> {
        let mut by_id: BTreeMap<String, (CaseRecord, Vec<ProceduralEvent>)> = self
            .cases
            .iter()
            .zip(self.events.iter())
            .map(|(c, e)| (c.case_id.clone(), (c.clone(), e.clone())))
            .collect();
        for (c, e) in replacements {
            by_id.insert(c.case_id.clone(), (c, e));
        }
        let mut cases = Vec::with_capacity(by_id.len());
        let mut events = Vec::new();
        for (_, (c, e)) in by_id {
            cases.push(c);
            events.extend(e);
        }
        CaseStore::from_parts(cases, events, Some(self.extraction_date))
    }

    pub fn case_rows(&self) -> Vec<CaseRow> {
        self.cases.iter().map(CaseRow::from_record).collect()
    }

    pub fn event_rows(&self) -> Vec<EventRow> {
        self.events.iter().flatten().map(EventRow::from_event).collect()
    }

    /// Writes the canonical form: cases sorted by id, events by
    /// (case_id, occurred_at, seq).
    pub fn export(&self, cases_path: &Path, events_path: &Path, format: FileFormat) -> Result<()> {
        write_rows(cases_path, format, &self.case_rows())?;
        write_rows(events_path, format, &self.event_rows())
    }

    /// Persists the store as a directory holding canonical CSVs and metadata.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| TriageError::io(dir, e))?;
        self.export(&dir.join("cases.csv"), &dir.join("events.csv"), FileFormat::Csv)?;
        let meta = StoreMeta { format_version: 1, extraction_date: self.extraction_date };
        let text = toml::to_string(&meta).map_err(|e| TriageError::Internal(e.to_string()))?;
        fs::write(dir.join("store.toml"), text).map_err(|e| TriageError::io(dir.join("store.toml"), e))
    }

    /// Writes the rows skipped at ingest as `file,line,reason`.
    pub fn write_rejects(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        for r in &self.rejects {
            w.serialize(r).map_err(|e| TriageError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<CaseStore> {
        if !dir.exists() {
            return Err(TriageError::MissingPath(dir.to_path_buf()));
        }
        let meta_path = dir.join("store.toml");
        let extraction = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| TriageError::io(&meta_path, e))?;
            let meta: StoreMeta =
                toml::from_str(&text).map_err(|e| TriageError::Data(format!("{}: {e}", meta_path.display())))?;
            Some(meta.extraction_date)
        } else {
            None
        };
        let loaded = CaseStore::ingest(&dir.join("cases.csv"), &dir.join("events.csv"), FileFormat::Csv)?;
        match extraction {
            Some(d) if d != loaded.extraction_date => {
                let rejects = loaded.rejects.clone();
                let mut s = CaseStore::from_parts(loaded.cases, loaded.events.into_iter().flatten().collect(), Some(d))?;
                s.rejects = rejects;
                Ok(s)
            }
            _ => Ok(loaded),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    format_version: u32,
    extraction_date: Day,
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, format: FileFormat, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| TriageError::io(parent, e))?;
    }
    match format {
        FileFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
            for r in rows {
                w.serialize(r).map_err(|e| TriageError::Internal(e.to_string()))?;
            }
            w.flush().map_err(|e| TriageError::io(path, e))?;
        }
        FileFormat::Jsonl => {
            let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| TriageError::io(path, e))?);
            for r in rows {
                let line = serde_json::to_string(r).map_err(|e| TriageError::Internal(e.to_string()))?;
                writeln!(f, "{line}").map_err(|e| TriageError::io(path, e))?;
            }
            f.flush().map_err(|e| TriageError::io(path, e))?;
        }
    }
    Ok(())
}

/// Checks the per-case invariants and folds the transfer chain into spans.
fn validate_case(case: &CaseRecord, events: &[ProceduralEvent]) -> Result<Vec<UnitSpan>> {
    let id = &case.case_id;
    let mut spans = vec![UnitSpan { unit: case.unit, entered: case.opened_at, left: None }];
    let mut initialized = 0usize;
    let mut transfers = 0usize;
    for e in events {
        if e.occurred_at < case.opened_at {
            return Err(TriageError::Data(format!(
                "case {id}: event seq {} dated {} precedes opened_at {}",
                e.seq, e.occurred_at, case.opened_at
            )));
        }
        if let Some(closed) = case.closed_at {
            if e.occurred_at > closed {
                return Err(TriageError::Data(format!(
                    "case {id}: event seq {} dated {} follows closed_at {closed}",
                    e.seq, e.occurred_at
                )));
            }
        }
        match e.event_type {
            EventType::Initialized => initialized += 1,
            EventType::UnitTransfer => {
                transfers += 1;
                let (from, to) = (e.from_unit, e.to_unit);
                let current = spans.last_mut().expect("at least one span");
                if from != Some(current.unit) {
                    return Err(TriageError::Data(format!(
                        "case {id}: transfer seq {} leaves {} but case is in {}",
                        e.seq,
                        from.map(|u| u.to_string()).unwrap_or_default(),
                        current.unit
                    )));
                }
                let to = to.expect("validated at parse");
                current.left = Some((e.occurred_at, UnitExit::Transfer(to)));
                spans.push(UnitSpan { unit: to, entered: e.occurred_at, left: None });
            }
            _ => {}
        }
    }
    if initialized != transfers + 1 {
        return Err(TriageError::Data(format!(
            "case {id}: expected {} initialized events (one per unit entry), found {initialized}",
            transfers + 1
        )));
    }
    if let Some(closed) = case.closed_at {
        spans.last_mut().expect("at least one span").left = Some((closed, UnitExit::Closed));
    }
    Ok(spans)
}

/// Canonical directory layout for the two flat files.
pub fn default_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("cases.csv"), dir.join("events.csv"))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn case(id: &str, opened: Day, unit: Unit, category: &str) -> CaseRecord {
        CaseRecord {
            case_id: id.into(),
            opened_at: opened,
            crime_category: category.into(),
            municipality: "M01".into(),
            unit,
            lawyer_id: "L1".into(),
            arrested_at_intake: false,
            closed_at: None,
            closure_kind: None,
            crime_date: None,
        }
    }

    pub fn event(id: &str, seq: u32, ty: EventType, day: Day, lawyer: &str) -> ProceduralEvent {
        ProceduralEvent {
            case_id: id.into(),
            seq,
            event_type: ty,
            occurred_at: day,
            actor_lawyer: lawyer.into(),
            from_unit: None,
            to_unit: None,
        }
    }

    pub fn transfer(id: &str, seq: u32, day: Day, from: Unit, to: Unit) -> ProceduralEvent {
        ProceduralEvent {
            from_unit: Some(from),
            to_unit: Some(to),
            ..event(id, seq, EventType::UnitTransfer, day, "L1")
        }
    }
}
