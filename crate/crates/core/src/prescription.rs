//! Statutory prescription screening of the low-scoring tail.
//!
//! Each crime subtype carries a prescription period:
//!
//! * fine only: 1 year;
//! * disqualification, suspension or deprivation of rights: 2 years;
//! * prison: the arithmetic mean of the minimum and maximum term (TMA),
//!   never below 3 years;
//! * imprescriptible subtypes have no period.
//!
//! A category's thresholds are the minimum, mean and maximum period over its
//! prescriptible subtypes. A case among the `k_bottom` lowest-scored is
//! flagged as potentially prescribed when `as_of − opened_at` reaches the
//! chosen threshold, converted at 365 days per year. Interruptions and
//! tolling are not modeled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::case_store::CaseStore;
use crate::date::{Day, YEAR_DAYS};
use crate::error::{Result, TriageError};
use crate::harness::RankedList;

pub const FINE_ONLY_YEARS: f64 = 1.0;
pub const RIGHTS_ONLY_YEARS: f64 = 2.0;
pub const PRISON_FLOOR_YEARS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    FineOnly,
    RightsOnly,
    Prison,
    /// Category with no statutory table; its cases are never screened.
    Unlegislated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeSubtype {
    pub category: String,
    pub subtype_id: String,
    pub penalty_kind: PenaltyKind,
    pub prison_min_years: Option<f64>,
    pub prison_max_years: Option<f64>,
    pub imprescriptible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Period {
    Years(f64),
    Imprescriptible,
}

pub fn subtype_period(s: &CrimeSubtype) -> Result<Period> {
    if s.imprescriptible {
        return Ok(Period::Imprescriptible);
    }
    match s.penalty_kind {
        PenaltyKind::FineOnly => Ok(Period::Years(FINE_ONLY_YEARS)),
        PenaltyKind::RightsOnly => Ok(Period::Years(RIGHTS_ONLY_YEARS)),
        PenaltyKind::Prison => match (s.prison_min_years, s.prison_max_years) {
            (Some(lo), Some(hi)) if lo > 0.0 && lo <= hi && hi.is_finite() => {
                Ok(Period::Years(PRISON_FLOOR_YEARS.max((lo + hi) / 2.0)))
            }
            (Some(lo), Some(hi)) => Err(TriageError::Data(format!(
                "subtype {}/{}: prison bounds must satisfy 0 < min <= max, got {lo}..{hi}",
                s.category, s.subtype_id
            ))),
            _ => Err(TriageError::Data(format!(
                "subtype {}/{}: prison penalty without both bounds",
                s.category, s.subtype_id
            ))),
        },
        PenaltyKind::Unlegislated => Err(TriageError::Data(format!(
            "subtype {}/{} is declared unlegislated and has no period",
            s.category, s.subtype_id
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionThresholds {
    pub category: String,
    /// Infinite when every subtype is imprescriptible.
    pub t_min_years: f64,
    pub t_mean_years: f64,
    pub t_max_years: f64,
    pub subtype_count: usize,
    pub all_imprescriptible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Min,
    Mean,
    Max,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Min, Rule::Mean, Rule::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Min => "min",
            Rule::Mean => "mean",
            Rule::Max => "max",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = TriageError;

    fn from_str(s: &str) -> Result<Rule> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Rule::Min),
            "mean" => Ok(Rule::Mean),
            "max" => Ok(Rule::Max),
            other => Err(TriageError::Config(format!("unknown threshold rule {other:?} (min|mean|max)"))),
        }
    }
}

impl PrescriptionThresholds {
    pub fn years(&self, rule: Rule) -> f64 {
        match rule {
            Rule::Min => self.t_min_years,
            Rule::Mean => self.t_mean_years,
            Rule::Max => self.t_max_years,
        }
    }

    pub fn days(&self, rule: Rule) -> f64 {
        self.years(rule) * YEAR_DAYS as f64
    }
}

pub fn category_thresholds(subtypes: &[CrimeSubtype]) -> Result<PrescriptionThresholds> {
    let Some(first) = subtypes.first() else {
        return Err(TriageError::Data("cannot derive thresholds from an empty subtype list".into()));
    };
    if let Some(other) = subtypes.iter().find(|s| s.category != first.category) {
        return Err(TriageError::Data(format!(
            "subtype list mixes categories {} and {}",
            first.category, other.category
        )));
    }
    let mut periods = Vec::with_capacity(subtypes.len());
    for s in subtypes {
        if let Period::Years(y) = subtype_period(s)? {
            periods.push(y);
        }
    }
    let (t_min_years, t_mean_years, t_max_years) = if periods.is_empty() {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        let lo = periods.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = periods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = periods.iter().sum::<f64>() / periods.len() as f64;
        // the mean of values inside [lo, hi] can drift outside by rounding
        (lo, mean.clamp(lo, hi), hi)
    };
    Ok(PrescriptionThresholds {
        category: first.category.clone(),
        t_min_years,
        t_mean_years,
        t_max_years,
        subtype_count: subtypes.len(),
        all_imprescriptible: periods.is_empty(),
    })
}

/// Parsed penalty table: thresholds per category plus the categories
/// declared unlegislated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdTable {
    pub by_category: BTreeMap<String, PrescriptionThresholds>,
    pub unlegislated: BTreeSet<String>,
}

impl ThresholdTable {
    pub fn from_subtypes(subtypes: Vec<CrimeSubtype>) -> Result<ThresholdTable> {
        let mut grouped: BTreeMap<String, Vec<CrimeSubtype>> = BTreeMap::new();
        let mut unlegislated = BTreeSet::new();
        for s in subtypes {
            if s.penalty_kind == PenaltyKind::Unlegislated {
                unlegislated.insert(s.category.clone());
            } else {
                grouped.entry(s.category.clone()).or_default().push(s);
            }
        }
        if let Some(c) = unlegislated.iter().find(|c| grouped.contains_key(*c)) {
            return Err(TriageError::Data(format!("category {c} is both legislated and unlegislated")));
        }
        let by_category = grouped
            .into_iter()
            .map(|(c, subs)| category_thresholds(&subs).map(|t| (c, t)))
            .collect::<Result<_>>()?;
        Ok(ThresholdTable { by_category, unlegislated })
    }

    /// Reads the penalty CSV (`category, subtype_id, penalty_kind,
    /// prison_min_years, prison_max_years, imprescriptible`).
    pub fn load(path: &Path) -> Result<ThresholdTable> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| TriageError::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| match e {
            TriageError::Data(m) => TriageError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_csv_str(text: &str) -> Result<ThresholdTable> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let subtypes = r
            .deserialize::<CrimeSubtype>()
            .enumerate()
            .map(|(i, row)| row.map_err(|e| TriageError::Data(format!("penalty row {}: {e}", i + 2))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_subtypes(subtypes)
    }

    pub fn get(&self, category: &str) -> Option<&PrescriptionThresholds> {
        self.by_category.get(category)
    }

    /// Categories present in the store that the table neither legislates
    /// nor declares unlegislated.
    pub fn missing_categories(&self, store: &CaseStore) -> Vec<String> {
        let present: BTreeSet<&str> = store.cases().iter().map(|c| c.crime_category.as_str()).collect();
        present
            .into_iter()
            .filter(|c| !self.by_category.contains_key(*c) && !self.unlegislated.contains(*c))
            .map(str::to_string)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        for t in self.by_category.values() {
            w.serialize(t).map_err(|e| TriageError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedCase {
    pub case_id: String,
    pub score: f64,
    /// 1 is the lowest-scored case.
    pub bottom_rank: usize,
    pub crime_category: String,
    pub opened_at: Day,
    pub age_days: i32,
    pub threshold_years: f64,
    pub rule: Rule,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagOutcome {
    pub as_of: Day,
    pub rule: Rule,
    /// Cases screened, `min(k_bottom, ranked.len())`.
    pub screened: usize,
    /// Ascending score.
    pub flagged: Vec<FlaggedCase>,
    /// Cases left unflagged because their category has no thresholds.
    pub warnings: Vec<String>,
}

impl FlagOutcome {
    pub fn share(&self) -> f64 {
        if self.screened == 0 {
            0.0
        } else {
            self.flagged.len() as f64 / self.screened as f64
        }
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.flagged.iter().map(|f| f.case_id.as_str()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        w.write_record([
            "case_id",
            "score",
            "bottom_rank",
            "crime_category",
            "opened_at",
            "age_days",
            "threshold_years",
            "rule",
            "status",
        ])
        .map_err(|e| TriageError::Internal(e.to_string()))?;
        for f in &self.flagged {
            w.write_record([
                f.case_id.clone(),
                f.score.to_string(),
                f.bottom_rank.to_string(),
                f.crime_category.clone(),
                f.opened_at.to_string(),
                f.age_days.to_string(),
                f.threshold_years.to_string(),
                f.rule.to_string(),
                f.status.to_string(),
            ])
            .map_err(|e| TriageError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }
}

pub const FLAG_STATUS: &str = "potentially_prescribed";

/// Screens the `k_bottom` lowest-scored cases of `ranked` for age at or
/// beyond the category threshold under `rule`.
pub fn flag_prescribed(
    store: &CaseStore,
    ranked: &RankedList,
    table: &ThresholdTable,
    rule: Rule,
    k_bottom: usize,
    as_of: Day,
) -> Result<FlagOutcome> {
    let mut flagged = Vec::new();
    let mut warnings = Vec::new();
    let mut screened = 0;
    for (i, e) in ranked.bottom(k_bottom).enumerate() {
        screened += 1;
        let case = store
            .get(&e.case_id)
            .ok_or_else(|| TriageError::NotFound(format!("case {} in ranked list", e.case_id)))?;
        let Some(t) = table.get(&case.crime_category) else {
            if !table.unlegislated.contains(&case.crime_category) {
                warnings.push(format!(
                    "case {}: no prescription thresholds for category {}",
                    case.case_id, case.crime_category
                ));
            }
            continue;
        };
        if t.all_imprescriptible {
            continue;
        }
        let age = as_of.days_since(case.opened_at);
        if age as f64 >= t.days(rule) {
            flagged.push(FlaggedCase {
                case_id: case.case_id.clone(),
                score: e.score,
                bottom_rank: i + 1,
                crime_category: case.crime_category.clone(),
                opened_at: case.opened_at,
                age_days: age,
                threshold_years: t.years(rule),
                rule,
                status: FLAG_STATUS,
            });
        }
    }
    Ok(FlagOutcome { as_of, rule, screened, flagged, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prison(cat: &str, id: &str, lo: f64, hi: f64) -> CrimeSubtype {
        CrimeSubtype {
            category: cat.into(),
            subtype_id: id.into(),
            penalty_kind: PenaltyKind::Prison,
            prison_min_years: Some(lo),
            prison_max_years: Some(hi),
            imprescriptible: false,
        }
    }

    fn kind(cat: &str, id: &str, k: PenaltyKind) -> CrimeSubtype {
        CrimeSubtype {
            category: cat.into(),
            subtype_id: id.into(),
            penalty_kind: k,
            prison_min_years: None,
            prison_max_years: None,
            imprescriptible: false,
        }
    }

    #[test]
    fn period_rules() {
        assert_eq!(subtype_period(&kind("A", "f", PenaltyKind::FineOnly)).unwrap(), Period::Years(1.0));
        assert_eq!(subtype_period(&kind("A", "r", PenaltyKind::RightsOnly)).unwrap(), Period::Years(2.0));
        assert_eq!(subtype_period(&prison("A", "p", 1.0, 3.0)).unwrap(), Period::Years(3.0));
        assert_eq!(subtype_period(&prison("A", "p", 2.0, 10.0)).unwrap(), Period::Years(6.0));
        let mut imp = prison("A", "i", 5.0, 9.0);
        imp.imprescriptible = true;
        assert_eq!(subtype_period(&imp).unwrap(), Period::Imprescriptible);
        assert!(subtype_period(&kind("A", "p", PenaltyKind::Prison)).is_err());
        assert!(subtype_period(&prison("A", "p", 5.0, 2.0)).is_err());
    }

    #[test]
    fn thresholds_over_subtypes() {
        let t = category_thresholds(&[prison("A", "1", 3.0, 3.0), prison("A", "2", 4.0, 6.0), prison("A", "3", 8.0, 12.0)])
            .unwrap();
        assert_eq!((t.t_min_years, t.t_mean_years, t.t_max_years), (3.0, 6.0, 10.0));
        let single = category_thresholds(&[prison("A", "1", 4.0, 4.0)]).unwrap();
        assert_eq!((single.t_min_years, single.t_mean_years, single.t_max_years), (4.0, 4.0, 4.0));
        let mut imp = prison("A", "2", 1.0, 1.0);
        imp.imprescriptible = true;
        let t = category_thresholds(&[prison("A", "1", 3.0, 3.0), imp.clone(), prison("A", "3", 6.0, 12.0)]).unwrap();
        assert_eq!((t.t_min_years, t.t_mean_years, t.t_max_years), (3.0, 6.0, 9.0));
        assert_eq!(t.subtype_count, 3);
        let all = category_thresholds(&[imp]).unwrap();
        assert!(all.all_imprescriptible);
        assert!(category_thresholds(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = "category,subtype_id,penalty_kind,prison_min_years,prison_max_years,imprescriptible\n\
                    A,a1,fine_only,,,false\n\
                    A,a2,prison,2,10,false\n\
                    B,b1,prison,,,true\n\
                    C,,unlegislated,,,false\n";
        let t = ThresholdTable::from_csv_str(text).unwrap();
        assert_eq!(t.get("A").unwrap().t_mean_years, 3.5);
        assert!(t.get("B").unwrap().all_imprescriptible);
        assert!(t.unlegislated.contains("C"));
        let bad = "category,subtype_id,penalty_kind,prison_min_years,prison_max_years,imprescriptible\nA,a,jail,,,false\n";
        assert!(ThresholdTable::from_csv_str(bad).is_err());
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("MEAN".parse::<Rule>().unwrap(), Rule::Mean);
        assert!("median".parse::<Rule>().is_err());
    }
}
