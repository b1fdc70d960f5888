//! Outcome labels and the observation schedule shared by models and the
//! empirical baseline.
//!
//! A case open in its unit at `obs` is positive when it is closed or
//! transferred out of that unit within `horizon` days. The label exists only
//! once `obs + horizon` is on or before the store's extraction date; censored
//! observations are dropped, never counted as negatives.

use crate::case_store::CaseStore;
use crate::date::Day;

/// `anchor, anchor + stride, …` up to and including `last`.
pub fn observation_dates(anchor: Day, stride_days: i32, last: Day) -> Vec<Day> {
    let stride = stride_days.max(1);
    let mut out = Vec::new();
    let mut d = anchor;
    while d <= last {
        out.push(d);
        d = d.plus(stride);
    }
    out
}

/// Label of the case at `idx` observed on `obs`, or `None` when censored.
pub fn label(store: &CaseStore, idx: usize, obs: Day, horizon: i32) -> Option<bool> {
    if obs.plus(horizon) > store.extraction_date() {
        return None;
    }
    Some(store.finalized_within(idx, obs, horizon).is_some())
}

/// `(observation date, case index)` pairs for every case open in any unit on
/// each date, in date then case-id order.
pub fn office_observations(store: &CaseStore, dates: &[Day]) -> Vec<(Day, usize)> {
    let mut out = Vec::new();
    for &d in dates {
        out.extend(store.open_any_indices(d).into_iter().map(|i| (d, i)));
    }
    out
}
