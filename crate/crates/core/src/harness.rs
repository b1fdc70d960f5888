//! Rolling temporal evaluation.
//!
//! For every prediction date `t` the harness trains on office-wide
//! observations dated on or before `t − horizon` (so every training label is
//! fully observed by `t`), scores every case open in the target unit at `t`,
//! ranks them and, once the horizon has elapsed, measures Precision@K and
//! Recall@K against the realized outcomes.
//!
//! Ranked lists order by score descending, then older `opened_at`, then
//! `case_id`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::baseline::{build_table_with, BaselineConfig, DEFAULT_PRIOR_STRENGTH};
use crate::case_store::{CaseStore, Unit};
use crate::date::{Day, HALF_YEAR_DAYS, YEAR_DAYS};
use crate::error::{Result, TriageError};
use crate::features::{assemble_with, FeatureConfig, FeatureExtractor, FeatureVector};
use crate::labels::{label, observation_dates, office_observations};
use crate::models::{dummy_score, fit_design, importance_by_group, Design, Family, Hyperparameters, ModelSpec};
use crate::par;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationPlan {
    pub unit: Unit,
    pub prediction_dates: Vec<Day>,
    pub label_horizon_days: i32,
    pub train_start: Day,
    pub k_top: usize,
    pub k_bottom: usize,
    pub model_specs: Vec<ModelSpec>,
    pub include_dummy: bool,
    pub include_empirical: bool,
    pub prior_strength: f64,
    /// Refit cadence in prediction dates; 1 refits at every date.
    pub refit_every_weeks: usize,
    /// Spacing of training observation dates, counted from `train_start`.
    pub observation_stride_days: i32,
    /// Seeded subsample cap on training examples per fit; 0 keeps all.
    pub max_train_examples: usize,
    pub min_history_days: i32,
    pub top_categories: usize,
    pub seed: u64,
}

impl Default for EvaluationPlan {
    fn default() -> Self {
        EvaluationPlan {
            unit: Unit::Mat,
            prediction_dates: Vec::new(),
            label_horizon_days: HALF_YEAR_DAYS,
            train_start: Day(0),
            k_top: 300,
            k_bottom: 1000,
            model_specs: vec![ModelSpec::new(
                Family::RandomForest,
                Hyperparameters { max_depth: Some(10), ..Hyperparameters::default() },
                7,
            )],
            include_dummy: true,
            include_empirical: true,
            prior_strength: DEFAULT_PRIOR_STRENGTH,
            refit_every_weeks: 1,
            observation_stride_days: 28,
            max_train_examples: 6000,
            min_history_days: YEAR_DAYS,
            top_categories: FeatureConfig::default().top_categories,
            seed: 7,
        }
    }
}

/// `weeks` dates seven days apart starting at `first`.
pub fn weekly_dates(first: Day, weeks: usize) -> Vec<Day> {
    (0..weeks).map(|w| first.plus(7 * w as i32)).collect()
}

impl EvaluationPlan {
    /// Weekly dates over the final quarter of the store's span, restricted to
    /// weeks whose outcomes are fully observable and that have at least
    /// `min_history_days` of history.
    pub fn default_dates(&self, store: &CaseStore) -> Vec<Day> {
        let Some(first) = store.first_date() else {
            return Vec::new();
        };
        let end = store.extraction_date();
        let span = end.days_since(first);
        let mut d = first.plus(span * 3 / 4).max(self.train_start.plus(self.min_history_days));
        let mut out = Vec::new();
        while d.plus(self.label_horizon_days) <= end {
            out.push(d);
            d = d.plus(7);
        }
        out
    }

    pub fn validate(&self, store: &CaseStore) -> Result<()> {
        if self.prediction_dates.is_empty() {
            return Err(TriageError::Config("plan has no prediction dates".into()));
        }
        if self.prediction_dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TriageError::Config("prediction dates must be strictly increasing".into()));
        }
        if self.label_horizon_days <= 0 || self.k_top == 0 {
            return Err(TriageError::Config("label horizon and k_top must be positive".into()));
        }
        let last = *self.prediction_dates.last().expect("non-empty");
        if last.plus(self.label_horizon_days) > store.extraction_date() {
            return Err(TriageError::Config(format!(
                "prediction date {last} + {} days runs past the extraction date {}",
                self.label_horizon_days,
                store.extraction_date()
            )));
        }
        let first = self.prediction_dates[0];
        if first.days_since(self.train_start) < self.min_history_days {
            return Err(TriageError::Config(format!(
                "first prediction date {first} leaves less than {} days of history after {}",
                self.min_history_days, self.train_start
            )));
        }
        if self.model_specs.is_empty() && !self.include_dummy && !self.include_empirical {
            return Err(TriageError::Config("plan evaluates no models".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EvaluationPlan> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| TriageError::io(path, e))?;
        toml::from_str(&text).map_err(|e| TriageError::Config(format!("{}: {e}", path.display())))
    }

    fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            prior_strength: self.prior_strength,
            horizon_days: self.label_horizon_days,
            observation_stride_days: self.observation_stride_days,
            anchor: Some(self.train_start),
        }
    }

    fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { top_categories: self.top_categories }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub case_id: String,
    pub score: f64,
    pub opened_at: Day,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub as_of: Day,
    pub model: String,
    pub entries: Vec<RankedEntry>,
}

pub fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.opened_at.cmp(&b.opened_at))
        .then_with(|| a.case_id.cmp(&b.case_id))
}

#[derive(Debug, Serialize, Deserialize)]
struct RankedRow {
    rank: usize,
    case_id: String,
    score: f64,
    opened_at: Day,
    label: Option<u8>,
}

impl RankedList {
    pub fn new(as_of: Day, model: impl Into<String>, mut entries: Vec<RankedEntry>) -> RankedList {
        entries.sort_by(rank_order);
        RankedList { as_of, model: model.into(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// The `k` lowest-ranked entries, lowest first.
    pub fn bottom(&self, k: usize) -> impl Iterator<Item = &RankedEntry> {
        self.entries.iter().rev().take(k)
    }

    /// Fills labels from the store when the horizon has elapsed.
    pub fn realize(&mut self, store: &CaseStore, horizon: i32) {
        for e in self.entries.iter_mut() {
            e.label = store
                .case_index(&e.case_id)
                .and_then(|i| label(store, i, self.as_of, horizon));
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        for (i, e) in self.entries.iter().enumerate() {
            w.serialize(RankedRow {
                rank: i + 1,
                case_id: e.case_id.clone(),
                score: e.score,
                opened_at: e.opened_at,
                label: e.label.map(u8::from),
            })
            .map_err(|e| TriageError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| TriageError::io(path, e))
    }

    /// Reads a list written by [`RankedList::write_csv`]; rows are re-sorted
    /// with the ranking rule.
    pub fn read_csv(path: &Path, as_of: Day, model: &str) -> Result<RankedList> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for row in r.deserialize::<RankedRow>() {
            let row = row.map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
            entries.push(RankedEntry {
                case_id: row.case_id,
                score: row.score,
                opened_at: row.opened_at,
                label: row.label.map(|l| l != 0),
            });
        }
        Ok(RankedList::new(as_of, model, entries))
    }
}

/// A metric value plus a flag for degenerate denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub value: f64,
    /// Entries actually used (`min(k, len)`).
    pub k_used: usize,
    /// Precision: fewer than `k` entries. Recall: no positives at all.
    pub flagged: bool,
}

fn realized(list: &RankedList) -> Result<Vec<bool>> {
    list.entries
        .iter()
        .map(|e| {
            e.label.ok_or_else(|| {
                TriageError::Data(format!("case {} in list for {} has no realized label", e.case_id, list.as_of))
            })
        })
        .collect()
}

pub fn precision_at_k(list: &RankedList, k: usize) -> Result<AtK> {
    let labels = realized(list)?;
    let used = k.min(labels.len());
    let hits = labels[..used].iter().filter(|l| **l).count();
    let value = if used == 0 { 0.0 } else { hits as f64 / used as f64 };
    Ok(AtK { value, k_used: used, flagged: used < k })
}

pub fn recall_at_k(list: &RankedList, k: usize) -> Result<AtK> {
    let labels = realized(list)?;
    let used = k.min(labels.len());
    let total = labels.iter().filter(|l| **l).count();
    let hits = labels[..used].iter().filter(|l| **l).count();
    if total == 0 {
        return Ok(AtK { value: 0.0, k_used: used, flagged: true });
    }
    Ok(AtK { value: hits as f64 / total as f64, k_used: used, flagged: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub tag: String,
    /// `None` for the empirical baseline.
    pub spec: Option<ModelSpec>,
    pub ranked: RankedList,
    pub precision: AtK,
    pub recall: AtK,
    pub importances: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DateResult {
    pub as_of: Day,
    pub trained_on: Day,
    pub train_examples: usize,
    pub n_scored: usize,
    pub positives: usize,
    pub runs: Vec<ModelRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResults {
    pub plan: EvaluationPlan,
    pub dates: Vec<DateResult>,
    pub group_of: HashMap<String, String>,
    pub family_of: HashMap<String, String>,
}

pub const EMPIRICAL_TAG: &str = "empirical";

/// Training design for a fit on `refit`: office-wide observations on the
/// schedule up to `refit − horizon`, seeded subsample when over the cap.
pub fn training_design(store: &CaseStore, ext: &FeatureExtractor<'_>, plan: &EvaluationPlan, refit: Day) -> Result<Design> {
    let h = plan.label_horizon_days;
    let dates = observation_dates(plan.train_start, plan.observation_stride_days, refit.minus(h));
    let mut candidates = office_observations(store, &dates);
    if plan.max_train_examples > 0 && candidates.len() > plan.max_train_examples {
        let mut rng = rng_from(derive_seed(plan.seed, &format!("train-sample-{refit}")));
        let mut keep = sample(&mut rng, candidates.len(), plan.max_train_examples).into_vec();
        keep.sort_unstable();
        candidates = keep.into_iter().map(|i| candidates[i]).collect();
    }
    if candidates.is_empty() {
        return Err(TriageError::Data(format!("no training observations before {}", refit.minus(h))));
    }
    let mut contexts = BTreeMap::new();
    for (d, _) in &candidates {
        contexts.entry(*d).or_insert_with(|| ext.context(*d));
    }
    let rows: Vec<(Vec<f64>, bool)> = par::map(&candidates, |&(d, idx)| {
        let v = ext.vector(&contexts[&d], idx);
        let y = store.finalized_within(idx, d, h).is_some();
        (v.values, y)
    });
    let p = ext.schema().len();
    let mut flat = Vec::with_capacity(rows.len() * p);
    let mut labels = Vec::with_capacity(rows.len());
    for (v, y) in rows {
        flat.extend(v);
        labels.push(y);
    }
    Ok(Design::new(flat, p, labels))
}

fn tags_for(plan: &EvaluationPlan) -> Vec<(String, Option<ModelSpec>)> {
    let mut out: Vec<(String, Option<ModelSpec>)> = Vec::new();
    let mut specs = plan.model_specs.clone();
    if plan.include_dummy && !specs.iter().any(|s| s.family == Family::Dummy) {
        specs.push(ModelSpec::new(Family::Dummy, Hyperparameters::default(), plan.seed));
    }
    for s in specs {
        let mut tag = s.tag();
        let mut n = 2;
        while out.iter().any(|(t, _)| *t == tag) {
            tag = format!("{}#{n}", s.tag());
            n += 1;
        }
        out.push((tag, Some(s)));
    }
    if plan.include_empirical {
        out.push((EMPIRICAL_TAG.to_string(), None));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn make_run(
    store: &CaseStore,
    plan: &EvaluationPlan,
    tag: &str,
    spec: Option<ModelSpec>,
    as_of: Day,
    vectors: &[FeatureVector],
    scores: Vec<f64>,
    importances: Option<BTreeMap<String, f64>>,
) -> Result<ModelRun> {
    let entries = vectors
        .iter()
        .zip(scores)
        .map(|(v, score)| {
            let idx = store.case_index(&v.case_id).expect("vector for a stored case");
            RankedEntry {
                case_id: v.case_id.clone(),
                score,
                opened_at: store.case(idx).opened_at,
                label: label(store, idx, as_of, plan.label_horizon_days),
            }
        })
        .collect();
    let ranked = RankedList::new(as_of, tag, entries);
    let precision = precision_at_k(&ranked, plan.k_top)?;
    let recall = recall_at_k(&ranked, plan.k_top)?;
    Ok(ModelRun { tag: tag.to_string(), spec, ranked, precision, recall, importances })
}

fn run_block(store: &CaseStore, plan: &EvaluationPlan, dates: &[Day]) -> Result<Vec<DateResult>> {
    let refit = dates[0];
    let ext = FeatureExtractor::new(store, refit, plan.feature_config());
    let tags = tags_for(plan);
    let needs_fit = tags
        .iter()
        .any(|(_, s)| s.as_ref().is_some_and(|s| s.family != Family::Dummy));
    let (design, names) = if needs_fit {
        (Some(training_design(store, &ext, plan, refit)?), ext.schema().names().to_vec())
    } else {
        (None, Vec::new())
    };
    let mut fitted = Vec::with_capacity(tags.len());
    for (tag, spec) in &tags {
        let model = match (spec, &design) {
            (Some(s), Some(d)) if s.family != Family::Dummy => Some(fit_design(s, d, names.clone(), refit)?),
            _ => None,
        };
        fitted.push((tag, spec, model));
    }
    let mut out = Vec::with_capacity(dates.len());
    for &t in dates {
        let vectors = assemble_with(&ext, plan.unit, t);
        let mut runs = Vec::with_capacity(fitted.len());
        for (tag, spec, model) in &fitted {
            let (scores, importances) = match (spec, model) {
                (_, Some(m)) => (m.score(&vectors)?, Some(m.importance_map())),
                (Some(s), None) => (vectors.iter().map(|v| dummy_score(s.seed, &v.case_id, t)).collect(), None),
                (None, None) => {
                    let table = build_table_with(store, t, &plan.baseline_config())?;
                    let scores = vectors
                        .iter()
                        .map(|v| table.rate(&store.get(&v.case_id).expect("stored case").crime_category))
                        .collect();
                    (scores, None)
                }
            };
            runs.push(make_run(store, plan, tag, (*spec).clone(), t, &vectors, scores, importances)?);
        }
        let positives = runs
            .first()
            .map_or(0, |r| r.ranked.entries.iter().filter(|e| e.label == Some(true)).count());
        out.push(DateResult {
            as_of: t,
            trained_on: refit,
            train_examples: design.as_ref().map_or(0, |d| d.n),
            n_scored: vectors.len(),
            positives,
            runs,
        });
    }
    Ok(out)
}

/// Executes the plan. Blocks of dates sharing a fit run in parallel; results
/// come back in date order.
pub fn run_plan(store: &CaseStore, plan: &EvaluationPlan) -> Result<PlanResults> {
    plan.validate(store)?;
    let every = plan.refit_every_weeks.max(1);
    let blocks: Vec<&[Day]> = plan.prediction_dates.chunks(every).collect();
    let results = par::map(&blocks, |b| run_block(store, plan, b));
    let mut dates = Vec::with_capacity(plan.prediction_dates.len());
    for r in results {
        dates.extend(r?);
    }
    let ext = FeatureExtractor::new(store, plan.prediction_dates[0], plan.feature_config());
    Ok(PlanResults {
        plan: plan.clone(),
        dates,
        group_of: ext.schema().group_of(),
        family_of: ext.schema().family_of(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub tag: String,
    pub family: String,
    pub weeks: usize,
    pub mean_precision: f64,
    pub se_precision: f64,
    pub mean_recall: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl PlanResults {
    pub fn tags(&self) -> Vec<String> {
        self.dates
            .first()
            .map(|d| d.runs.iter().map(|r| r.tag.clone()).collect())
            .unwrap_or_default()
    }

    pub fn runs_for<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a ModelRun> + 'a {
        self.dates.iter().flat_map(move |d| d.runs.iter().filter(move |r| r.tag == tag))
    }

    pub fn summary(&self, tag: &str) -> Option<ModelSummary> {
        let runs: Vec<&ModelRun> = self.runs_for(tag).collect();
        let first = runs.first()?;
        let precision: Vec<f64> = runs.iter().map(|r| r.precision.value).collect();
        let recall: Vec<f64> = runs.iter().map(|r| r.recall.value).collect();
        let (mean_precision, se_precision) = mean_se(&precision);
        let (mean_recall, _) = mean_se(&recall);
        Some(ModelSummary {
            tag: tag.to_string(),
            family: first.spec.as_ref().map_or(EMPIRICAL_TAG.to_string(), |s| s.family.to_string()),
            weeks: runs.len(),
            mean_precision,
            se_precision,
            mean_recall,
        })
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.tags().iter().filter_map(|t| self.summary(t)).collect()
    }

    /// Mean and standard error of the weekly share of positives among scored cases.
    pub fn population_rate(&self) -> (f64, f64) {
        let rates: Vec<f64> = self
            .dates
            .iter()
            .filter(|d| d.n_scored > 0)
            .map(|d| d.positives as f64 / d.n_scored as f64)
            .collect();
        mean_se(&rates)
    }

    /// Feature importances averaged over the weeks a model was refit.
    pub fn mean_importances(&self, tag: &str) -> Option<BTreeMap<String, f64>> {
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        let mut n = 0usize;
        let mut seen = Vec::new();
        for d in &self.dates {
            if seen.contains(&d.trained_on) {
                continue;
            }
            if let Some(imp) = d.runs.iter().find(|r| r.tag == tag).and_then(|r| r.importances.as_ref()) {
                seen.push(d.trained_on);
                n += 1;
                for (k, v) in imp {
                    *acc.entry(k.clone()).or_default() += v;
                }
            }
        }
        if n == 0 {
            return None;
        }
        for v in acc.values_mut() {
            *v /= n as f64;
        }
        Some(acc)
    }

    pub fn grouped_importances(&self, tag: &str) -> Option<BTreeMap<String, f64>> {
        self.mean_importances(tag).map(|imp| importance_by_group(&imp, &self.group_of))
    }

    pub fn family_importances(&self, tag: &str) -> Option<BTreeMap<String, f64>> {
        self.mean_importances(tag).map(|imp| importance_by_group(&imp, &self.family_of))
    }
}

/// Per family, the spec with the highest mean Precision@k_top. Ties prefer
/// fewer trees, then shallower depth, then smaller L2, then spec order.
pub fn select_best_per_family(results: &PlanResults) -> BTreeMap<Family, (String, ModelSpec)> {
    let mut best: BTreeMap<Family, (String, ModelSpec, f64, usize)> = BTreeMap::new();
    for (order, tag) in results.tags().iter().enumerate() {
        let Some(spec) = results.runs_for(tag).next().and_then(|r| r.spec.clone()) else {
            continue;
        };
        let mean = results.summary(tag).map_or(0.0, |s| s.mean_precision);
        let better = match best.get(&spec.family) {
            None => true,
            Some((_, b, bm, bo)) => {
                mean > *bm || (mean == *bm && (spec.complexity(), order) < (b.complexity(), *bo))
            }
        };
        if better {
            best.insert(spec.family, (tag.clone(), spec, mean, order));
        }
    }
    best.into_iter().map(|(f, (t, s, _, _))| (f, (t, s))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Municipality,
    CrimeCategory,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Municipality => "municipality",
            Grouping::CrimeCategory => "crime_category",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupRow {
    pub group: String,
    pub scored: usize,
    pub in_top_k: usize,
    pub positives: usize,
    pub positives_in_top_k: usize,
    pub exposure: f64,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub low_support: bool,
}

/// Exposure, precision and recall per subgroup, pooled over `lists`.
/// Exposure is the group's share of the top-K minus its share of all
/// scored cases.
pub fn subgroup_diagnostics(
    store: &CaseStore,
    lists: &[&RankedList],
    grouping: Grouping,
    k: usize,
    min_support: usize,
) -> Result<Vec<SubgroupRow>> {
    #[derive(Default)]
    struct Acc {
        scored: usize,
        top: usize,
        pos: usize,
        pos_top: usize,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let (mut total_scored, mut total_top) = (0usize, 0usize);
    for list in lists {
        let labels = realized(list)?;
        let used = k.min(list.len());
        for (i, (e, y)) in list.entries.iter().zip(labels).enumerate() {
            let case = store
                .get(&e.case_id)
                .ok_or_else(|| TriageError::NotFound(format!("case {}", e.case_id)))?;
            let key = match grouping {
                Grouping::Municipality => case.municipality.clone(),
                Grouping::CrimeCategory => case.crime_category.clone(),
            };
            let a = acc.entry(key).or_default();
            a.scored += 1;
            a.pos += y as usize;
            if i < used {
                a.top += 1;
                a.pos_top += y as usize;
            }
        }
        total_scored += list.len();
        total_top += used;
    }
    let share = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(acc
        .into_iter()
        .map(|(group, a)| SubgroupRow {
            group,
            scored: a.scored,
            in_top_k: a.top,
            positives: a.pos,
            positives_in_top_k: a.pos_top,
            exposure: share(a.top, total_top) - share(a.scored, total_scored),
            precision_at_k: share(a.pos_top, a.top),
            recall_at_k: share(a.pos_top, a.pos),
            low_support: a.scored < min_support,
        })
        .collect())
}

pub fn slug(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> TriageError {
    TriageError::Internal(e.to_string())
}

pub const SUBGROUP_MIN_SUPPORT: usize = 20;

/// Writes the evaluation artifacts into `dir` and returns their paths:
/// weekly metrics, one ranked list per (date, model), the best-per-family
/// summary, grouped and per-family importances and subgroup diagnostics.
pub fn write_outputs(results: &PlanResults, store: &CaseStore, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("ranked")).map_err(|e| TriageError::io(dir, e))?;
    let mut written = Vec::new();
    let k = results.plan.k_top;

    let path = dir.join("weekly_metrics.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "as_of", "model", "family", "k", "precision_at_k", "recall_at_k", "n_scored", "positives", "shortfall",
    ])
    .map_err(csv_err)?;
    for d in &results.dates {
        for r in &d.runs {
            let family = r.spec.as_ref().map_or(EMPIRICAL_TAG.to_string(), |s| s.family.to_string());
            w.write_record([
                d.as_of.to_string(),
                r.tag.clone(),
                family,
                k.to_string(),
                r.precision.value.to_string(),
                r.recall.value.to_string(),
                d.n_scored.to_string(),
                d.positives.to_string(),
                r.precision.flagged.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| TriageError::io(&path, e))?;
    written.push(path);

    for d in &results.dates {
        for r in &d.runs {
            let path = dir.join("ranked").join(format!("{}_{}.csv", d.as_of, slug(&r.tag)));
            r.ranked.write_csv(&path)?;
            written.push(path);
        }
    }

    let best = select_best_per_family(results);
    let mut table_tags: Vec<String> = best.values().map(|(t, _)| t.clone()).collect();
    if results.plan.include_empirical {
        table_tags.push(EMPIRICAL_TAG.to_string());
    }
    let path = dir.join("best_models.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["family", "model", "weeks", "mean_precision_at_k", "se_precision_at_k", "mean_recall_at_k"])
        .map_err(csv_err)?;
    for tag in &table_tags {
        if let Some(s) = results.summary(tag) {
            w.write_record([
                s.family,
                s.tag,
                s.weeks.to_string(),
                s.mean_precision.to_string(),
                s.se_precision.to_string(),
                s.mean_recall.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| TriageError::io(&path, e))?;
    written.push(path);

    for (name, grouped) in [("grouped_importance.csv", true), ("family_importance.csv", false)] {
        let path = dir.join(name);
        let mut w = csv_writer(&path)?;
        w.write_record(["model", if grouped { "group" } else { "feature_family" }, "importance"])
            .map_err(csv_err)?;
        for (tag, _) in best.values() {
            let imp = if grouped { results.grouped_importances(tag) } else { results.family_importances(tag) };
            let Some(imp) = imp else { continue };
            let mut rows: Vec<(String, f64)> = imp.into_iter().collect();
            rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (g, v) in rows {
                w.write_record([tag.clone(), g, v.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| TriageError::io(&path, e))?;
        written.push(path);
    }

    for grouping in [Grouping::Municipality, Grouping::CrimeCategory] {
        let path = dir.join(format!("subgroup_{}.csv", grouping.as_str()));
        let mut w = csv_writer(&path)?;
        w.write_record([
            "model",
            "group",
            "scored",
            "in_top_k",
            "positives",
            "positives_in_top_k",
            "exposure",
            "precision_at_k",
            "recall_at_k",
            "low_support",
        ])
        .map_err(csv_err)?;
        for tag in &table_tags {
            let lists: Vec<&RankedList> = results.runs_for(tag).map(|r| &r.ranked).collect();
            for row in subgroup_diagnostics(store, &lists, grouping, k, SUBGROUP_MIN_SUPPORT)? {
                w.write_record([
                    tag.clone(),
                    row.group,
                    row.scored.to_string(),
                    row.in_top_k.to_string(),
                    row.positives.to_string(),
                    row.positives_in_top_k.to_string(),
                    row.exposure.to_string(),
                    row.precision_at_k.to_string(),
                    row.recall_at_k.to_string(),
                    row.low_support.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| TriageError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
