//! Empirical base-rate ranking by crime category.
//!
//! Each category's historical finalization rate is shrunk toward the
//! office-wide rate with `m` pseudo-observations:
//!
//! ```text
//! p_smoothed = (n · p_raw + m · global) / (n + m)
//! ```
//!
//! The history is every case open in any unit on the observation schedule,
//! labeled with the same horizon and censoring rule as the models, keeping
//! only outcomes fully observed strictly before the scoring date.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case_store::{CaseRecord, CaseStore};
use crate::date::{Day, HALF_YEAR_DAYS};
use crate::error::{Result, TriageError};
use crate::labels::observation_dates;

pub const DEFAULT_PRIOR_STRENGTH: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub n: u64,
    pub p_raw: f64,
    pub p_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRateTable {
    pub as_of: Day,
    pub global_rate: f64,
    pub prior_strength: f64,
    pub per_crime: BTreeMap<String, CategoryRate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub prior_strength: f64,
    pub horizon_days: i32,
    pub observation_stride_days: i32,
    /// First observation date; defaults to the store's earliest opening.
    pub anchor: Option<Day>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            prior_strength: DEFAULT_PRIOR_STRENGTH,
            horizon_days: HALF_YEAR_DAYS,
            observation_stride_days: 28,
            anchor: None,
        }
    }
}

pub fn shrink(n: u64, p_raw: f64, global: f64, m: f64) -> f64 {
    if n == 0 {
        return global;
    }
    let n = n as f64;
    (n * p_raw + m * global) / (n + m)
}

impl BaseRateTable {
    /// Assembles a table from `(category, n, positives)` counts.
    pub fn from_counts(as_of: Day, prior_strength: f64, counts: &BTreeMap<String, (u64, u64)>) -> Result<BaseRateTable> {
        if !(prior_strength.is_finite() && prior_strength >= 0.0) {
            return Err(TriageError::Config(format!("prior strength must be >= 0, got {prior_strength}")));
        }
        let total: u64 = counts.values().map(|c| c.0).sum();
        if total == 0 {
            return Err(TriageError::Data(format!("no labeled historical outcomes before {as_of}")));
        }
        let positives: u64 = counts.values().map(|c| c.1).sum();
        let global_rate = positives as f64 / total as f64;
        let per_crime = counts
            .iter()
            .map(|(cat, &(n, pos))| {
                let p_raw = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
                let p_smoothed = shrink(n, p_raw, global_rate, prior_strength);
                (cat.clone(), CategoryRate { n, p_raw, p_smoothed })
            })
            .collect();
        Ok(BaseRateTable { as_of, global_rate, prior_strength, per_crime })
    }

    pub fn rate(&self, category: &str) -> f64 {
        self.per_crime.get(category).map_or(self.global_rate, |c| c.p_smoothed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        let err = |e: csv::Error| TriageError::Internal(e.to_string());
        w.write_record(["crime_category", "n", "p_raw", "p_smoothed"]).map_err(err)?;
        w.write_record(["__global__", "", "", &self.global_rate.to_string()]).map_err(err)?;
        for (cat, r) in &self.per_crime {
            w.write_record([cat.as_str(), &r.n.to_string(), &r.p_raw.to_string(), &r.p_smoothed.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }
}

pub fn build_table(store: &CaseStore, as_of: Day, prior_strength: f64) -> Result<BaseRateTable> {
    build_table_with(store, as_of, &BaselineConfig { prior_strength, ..BaselineConfig::default() })
}

pub fn build_table_with(store: &CaseStore, as_of: Day, cfg: &BaselineConfig) -> Result<BaseRateTable> {
    let anchor = match cfg.anchor.or_else(|| store.first_date()) {
        Some(a) => a,
        None => return Err(TriageError::Data(format!("no labeled historical outcomes before {as_of}"))),
    };
    // outcome fully observed strictly before as_of: obs + horizon < as_of
    let last = as_of.minus(cfg.horizon_days + 1);
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for obs in observation_dates(anchor, cfg.observation_stride_days, last) {
        for idx in store.open_any_indices(obs) {
            let positive = store.finalized_within(idx, obs, cfg.horizon_days).is_some();
            let entry = counts.entry(store.case(idx).crime_category.clone()).or_default();
            entry.0 += 1;
            entry.1 += positive as u64;
        }
    }
    BaseRateTable::from_counts(as_of, cfg.prior_strength, &counts)
}

pub fn score_baseline(table: &BaseRateTable, cases: &[&CaseRecord]) -> Vec<f64> {
    cases.iter().map(|c| table.rate(&c.crime_category)).collect()
}
