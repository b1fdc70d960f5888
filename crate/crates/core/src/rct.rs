//! Weekly randomized cohorts with once-only enrollment.
//!
//! Each week the ranking is walked top-down, skipping cases already in the
//! enrollment ledger, until `2 × arm_size` eligible cases are collected.
//! A seeded permutation then splits them evenly into treatment and control.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::case_store::CaseStore;
use crate::date::{Day, HALF_YEAR_DAYS};
use crate::error::{Result, TriageError};
use crate::harness::RankedList;
use crate::rng::{derive_seed, rng_from};

pub const ARM_SIZE: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub case_id: String,
    /// 1-based position in the week's ranking.
    pub rank: usize,
    pub arm: Arm,
    pub week_index: usize,
    pub as_of: Day,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RctCohort {
    pub week_index: usize,
    pub as_of: Day,
    /// Rank order.
    pub members: Vec<CohortMember>,
    /// Ledger members skipped while filling the cohort.
    pub replacements_used: usize,
    pub seed: u64,
    /// The eligible pool was smaller than two full arms.
    pub shortfall: bool,
}

impl RctCohort {
    pub fn arm(&self, arm: Arm) -> BTreeSet<&str> {
        self.members.iter().filter(|m| m.arm == arm).map(|m| m.case_id.as_str()).collect()
    }

    pub fn treatment(&self) -> BTreeSet<&str> {
        self.arm(Arm::Treatment)
    }

    pub fn control(&self) -> BTreeSet<&str> {
        self.arm(Arm::Control)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        for m in &self.members {
            w.serialize(m).map_err(|e| TriageError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }
}

/// Persistent once-only enrollment record, one `case_id,week_index,arm`
/// line per enrolled case. Writes only ever append.
#[derive(Debug, Clone, Default)]
pub struct EnrollmentLedger {
    path: Option<PathBuf>,
    entries: BTreeMap<String, (usize, Arm)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerRow {
    case_id: String,
    week_index: usize,
    arm: Arm,
}

impl EnrollmentLedger {
    pub fn in_memory() -> EnrollmentLedger {
        EnrollmentLedger::default()
    }

    /// Opens the ledger at `path`; a missing file is an empty ledger.
    pub fn open(path: &Path) -> Result<EnrollmentLedger> {
        let mut ledger = EnrollmentLedger { path: Some(path.to_path_buf()), entries: BTreeMap::new() };
        if !path.exists() {
            return Ok(ledger);
        }
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        for row in r.deserialize::<LedgerRow>() {
            let row = row.map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
            if ledger.entries.insert(row.case_id.clone(), (row.week_index, row.arm)).is_some() {
                return Err(TriageError::Data(format!(
                    "{}: case {} enrolled twice",
                    path.display(),
                    row.case_id
                )));
            }
        }
        Ok(ledger)
    }

    pub fn contains(&self, case_id: &str) -> bool {
        self.entries.contains_key(case_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_week_index(&self) -> usize {
        self.entries.values().map(|(w, _)| w + 1).max().unwrap_or(0)
    }

    /// Adds a cohort, appending to the backing file when there is one.
    pub fn record(&mut self, cohort: &RctCohort) -> Result<()> {
        if let Some(m) = cohort.members.iter().find(|m| self.contains(&m.case_id)) {
            return Err(TriageError::Data(format!("case {} is already enrolled", m.case_id)));
        }
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| TriageError::io(dir, e))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| TriageError::io(path, e))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            for m in &cohort.members {
                w.serialize(LedgerRow { case_id: m.case_id.clone(), week_index: m.week_index, arm: m.arm })
                    .map_err(|e| TriageError::Internal(e.to_string()))?;
            }
            w.flush().map_err(|e| TriageError::io(path, e))?;
            w.into_inner()
                .map_err(|e| TriageError::Internal(e.to_string()))?
                .flush()
                .map_err(|e| TriageError::io(path, e))?;
        }
        for m in &cohort.members {
            self.entries.insert(m.case_id.clone(), (m.week_index, m.arm));
        }
        Ok(())
    }
}

/// Builds one week's cohort from the ranking snapshot.
pub fn assign_week(
    ranked: &RankedList,
    ledger: &EnrollmentLedger,
    seed: u64,
    week_index: usize,
    arm_size: usize,
) -> RctCohort {
    let want = 2 * arm_size;
    let mut picked: Vec<(usize, &str)> = Vec::with_capacity(want);
    let mut skips = 0;
    for (i, e) in ranked.entries.iter().enumerate() {
        if picked.len() == want {
            break;
        }
        if ledger.contains(&e.case_id) {
            skips += 1;
        } else {
            picked.push((i + 1, &e.case_id));
        }
    }
    let shortfall = picked.len() < want;
    picked.truncate(picked.len() - picked.len() % 2);
    let half = picked.len() / 2;
    let mut order: Vec<usize> = (0..picked.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, "rct-assign")));
    let mut arms = vec![Arm::Control; picked.len()];
    for &j in &order[..half] {
        arms[j] = Arm::Treatment;
    }
    let members = picked
        .into_iter()
        .zip(arms)
        .map(|((rank, id), arm)| CohortMember {
            case_id: id.to_string(),
            rank,
            arm,
            week_index,
            as_of: ranked.as_of,
        })
        .collect();
    RctCohort { week_index, as_of: ranked.as_of, members, replacements_used: skips, seed, shortfall }
}

/// Reads every `*.csv` cohort file in `dir`, in file-name order.
pub fn read_cohorts(dir: &Path) -> Result<Vec<CohortMember>> {
    if !dir.is_dir() {
        return Err(TriageError::MissingPath(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| TriageError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let mut r = csv::Reader::from_path(&f).map_err(|e| TriageError::Data(format!("{}: {e}", f.display())))?;
        for row in r.deserialize::<CohortMember>() {
            out.push(row.map_err(|e| TriageError::Data(format!("{}: {e}", f.display())))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub n: usize,
    pub resolved: usize,
    pub resolution_rate: f64,
    /// Binomial standard error of the rate.
    pub se: f64,
    /// Median days from assignment to resolution among resolved cases.
    pub median_days: Option<f64>,
}

fn median(mut v: Vec<i32>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] as f64 } else { (v[m - 1] as f64 + v[m] as f64) / 2.0 })
}

/// Descriptive per-arm outcomes over `horizon_days` after each member's
/// assignment date. Cases not finalized in time count as unresolved.
pub fn outcomes_report(store: &CaseStore, members: &[CohortMember], horizon_days: i32) -> Result<Vec<ArmOutcome>> {
    if let Some(last) = members.iter().map(|m| m.as_of).max() {
        let needed = last.plus(horizon_days);
        if needed > store.extraction_date() {
            return Err(TriageError::Data(format!(
                "follow-up ends {} but the store is extracted at {}: {} days short",
                needed,
                store.extraction_date(),
                needed.days_since(store.extraction_date())
            )));
        }
    }
    let mut out = Vec::new();
    for arm in [Arm::Treatment, Arm::Control] {
        let mut n = 0;
        let mut days = Vec::new();
        for m in members.iter().filter(|m| m.arm == arm) {
            n += 1;
            let idx = store
                .case_index(&m.case_id)
                .ok_or_else(|| TriageError::NotFound(format!("cohort case {}", m.case_id)))?;
            if let Some(d) = store.finalized_within(idx, m.as_of, horizon_days) {
                days.push(d.days_since(m.as_of));
            }
        }
        let resolved = days.len();
        let rate = if n == 0 { 0.0 } else { resolved as f64 / n as f64 };
        let se = if n == 0 { 0.0 } else { (rate * (1.0 - rate) / n as f64).sqrt() };
        out.push(ArmOutcome { arm, n, resolved, resolution_rate: rate, se, median_days: median(days) });
    }
    Ok(out)
}

pub fn write_outcomes(path: &Path, rows: &[ArmOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| TriageError::Internal(e.to_string());
    w.write_record(["arm", "n", "resolved", "resolution_rate", "se", "median_days_to_resolution"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.arm.as_str().to_string(),
            r.n.to_string(),
            r.resolved.to_string(),
            r.resolution_rate.to_string(),
            r.se.to_string(),
            r.median_days.map_or("N/A".to_string(), |m| m.to_string()),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TriageError::io(path, e))
}

pub const DEFAULT_HORIZON_DAYS: i32 = HALF_YEAR_DAYS;
