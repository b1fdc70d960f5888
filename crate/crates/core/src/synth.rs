//! Synthetic case histories with a planted, tunable resolution signal.
//!
//! The generator walks the date span week by week:
//!
//! * arrivals follow a homogeneous daily rate, counted per 30-day block
//!   with exact integer rounding and placed on uniformly drawn days;
//! * every open case emits Poisson activity at its own latent rate;
//! * cases in MAT leave by transfer with a per-week logistic hazard;
//! * office-wide closures meet weekly quotas derived from the monthly
//!   closure and alternative-mechanism means, filled by weighted sampling
//!   without replacement.
//!
//! Both the transfer hazard and the closure weights depend on
//! `activity_effect × log(1 + events in the last 90 days)`, an age penalty
//! beyond one year and a per-category offset. With `activity_effect = 0`
//! recent activity carries no information about resolution.
//!
//! All draws come from one `ChaCha8Rng` seeded from `seed`;
//! transcendental functions go through `libm` so output is identical across
//! platforms.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case_store::{CaseRecord, CaseStore, ClosureKind, EventType, Milestone, ProceduralEvent, Unit};
use crate::date::{Day, HALF_YEAR_DAYS, MONTH_DAYS, YEAR_DAYS};
use crate::error::{Result, TriageError};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Total number of cases. Zero derives the count from `monthly_arrivals`;
    /// otherwise closure rates are scaled by the same factor as arrivals.
    pub n_cases: usize,
    /// Inclusive `[start, end]`; `end` is the extraction date.
    pub date_span: (Day, Day),
    pub monthly_arrivals: f64,
    pub monthly_closures: f64,
    pub monthly_alternative: f64,
    pub crime_mix: BTreeMap<String, f64>,
    pub activity_effect: f64,
    /// Standard deviation of the per-category log-odds offset.
    pub category_effect: f64,
    pub lawyer_count: usize,
    pub unit_count: usize,
    /// Share of arrivals entering MAT.
    pub mat_share: f64,
    /// Weekly probability of a MAT transfer for a case at average activity.
    pub transfer_rate: f64,
    /// Mean events per open case per 30 days.
    pub monthly_events: f64,
    pub municipality_count: usize,
}

pub fn default_crime_mix() -> BTreeMap<String, f64> {
    [
        ("ROBO", 0.22),
        ("VIOLENCIA_FAMILIAR", 0.14),
        ("LESIONES", 0.10),
        ("AMENAZAS", 0.08),
        ("DANO_PROPIEDAD", 0.07),
        ("FRAUDE", 0.06),
        ("ROBO_VEHICULO", 0.06),
        ("ABUSO_CONFIANZA", 0.05),
        ("NARCOMENUDEO", 0.05),
        ("DESPOJO", 0.04),
        ("ALLANAMIENTO", 0.03),
        ("ABUSO_SEXUAL", 0.03),
        ("EXTORSION", 0.03),
        ("HOMICIDIO", 0.02),
        ("SECUESTRO", 0.01),
        ("DESAPARICION_FORZADA", 0.01),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_cases: 10_000,
            date_span: (Day::from_ymd(2020, 1, 1), Day::from_ymd(2022, 12, 31)),
            monthly_arrivals: 1831.0,
            monthly_closures: 746.0,
            monthly_alternative: 217.0,
            crime_mix: default_crime_mix(),
            activity_effect: 1.5,
            category_effect: 0.3,
            lawyer_count: 60,
            unit_count: 5,
            mat_share: 0.6,
            transfer_rate: 0.012,
            monthly_events: 1.2,
            municipality_count: 20,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<SynthConfig> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| TriageError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SynthConfig> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| TriageError::io(path, e))?;
        SynthConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.date_span;
        if end <= start {
            return Err(TriageError::Config(format!("date_span [{start}, {end}] has zero width")));
        }
        let rates = [
            ("monthly_arrivals", self.monthly_arrivals),
            ("monthly_closures", self.monthly_closures),
            ("monthly_alternative", self.monthly_alternative),
            ("activity_effect", self.activity_effect),
            ("category_effect", self.category_effect),
            ("monthly_events", self.monthly_events),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TriageError::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.n_cases == 0 && self.monthly_arrivals == 0.0 {
            return Err(TriageError::Config("n_cases and monthly_arrivals are both zero".into()));
        }
        for (name, p) in [("mat_share", self.mat_share), ("transfer_rate", self.transfer_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TriageError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.crime_mix.is_empty() {
            return Err(TriageError::Config("crime_mix is empty".into()));
        }
        if self.crime_mix.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(TriageError::Config("crime_mix weights must be >= 0".into()));
        }
        let total: f64 = self.crime_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TriageError::Config(format!("crime_mix sums to {total}, expected 1")));
        }
        if !(1..=Unit::ALL.len()).contains(&self.unit_count) {
            return Err(TriageError::Config(format!("unit_count must be 1..=5, got {}", self.unit_count)));
        }
        if self.lawyer_count < self.unit_count {
            return Err(TriageError::Config("lawyer_count must be at least unit_count".into()));
        }
        if self.municipality_count == 0 {
            return Err(TriageError::Config("municipality_count must be positive".into()));
        }
        Ok(())
    }

    fn span_days(&self) -> i32 {
        self.date_span.1.days_since(self.date_span.0) + 1
    }

    /// Arrivals per day and the factor applied to the closure means.
    fn daily_rates(&self) -> (f64, f64) {
        let days = self.span_days() as f64;
        let arrivals = if self.n_cases > 0 {
            self.n_cases as f64 / days
        } else {
            self.monthly_arrivals / MONTH_DAYS as f64
        };
        let scale = if self.monthly_arrivals > 0.0 {
            arrivals * MONTH_DAYS as f64 / self.monthly_arrivals
        } else {
            1.0
        };
        (arrivals, scale)
    }
}

/// Integer count falling in `[from, to)` for a cumulative rate, rounded so
/// that consecutive intervals add up exactly.
fn quota(rate: f64, from: i32, to: i32) -> usize {
    let hi = libm::round(rate * to as f64) as i64;
    let lo = libm::round(rate * from as f64) as i64;
    (hi - lo).max(0) as usize
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    let limit = libm::exp(-lambda);
    let mut k = 0;
    let mut p = rng.gen::<f64>();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (item, w) in items {
        if u < *w {
            return *item;
        }
        u -= w;
    }
    items.last().expect("non-empty choice").0
}

const ACTIVITY_EVENTS: [(EventType, f64); 11] = [
    (EventType::ProgressUpdate, 0.50),
    (EventType::SuspectUpdate, 0.12),
    (EventType::PartyUpdate, 0.14),
    (EventType::SearchWarrant, 0.06),
    (EventType::Milestone(Milestone::Judicialization), 0.035),
    (EventType::Milestone(Milestone::PreventiveDetention), 0.02),
    (EventType::Milestone(Milestone::JudicialAuthorization), 0.035),
    (EventType::Milestone(Milestone::ArrestWarrant), 0.03),
    (EventType::Milestone(Milestone::ConciliationReferral), 0.025),
    (EventType::Milestone(Milestone::VinculacionAProceso), 0.025),
    (EventType::Milestone(Milestone::AlternativeMechanism), 0.01),
];

/// Log-odds penalty per year of age beyond the first.
const AGE_EFFECT: f64 = 0.5;
const ARREST_EFFECT: f64 = 0.4;
const REASSIGN_RATE: f64 = 0.004;
const RECENT_DAYS: i32 = 90;

struct SimCase {
    record: CaseRecord,
    events: Vec<ProceduralEvent>,
    rate: f64,
    unit: Unit,
    lawyer: String,
    offset: f64,
    recent: VecDeque<Day>,
    open: bool,
}

impl SimCase {
    fn push(&mut self, ty: EventType, day: Day, from: Option<Unit>, to: Option<Unit>) {
        let seq = self.events.len() as u32;
        self.events.push(ProceduralEvent {
            case_id: self.record.case_id.clone(),
            seq,
            event_type: ty,
            occurred_at: day,
            actor_lawyer: self.lawyer.clone(),
            from_unit: from,
            to_unit: to,
        });
        self.recent.push_back(day);
    }

    fn recent_count(&mut self, today: Day) -> usize {
        while self.recent.front().is_some_and(|d| *d <= today.minus(RECENT_DAYS)) {
            self.recent.pop_front();
        }
        self.recent.len()
    }
}

/// Deterministic store for a configuration.
pub fn generate(cfg: &SynthConfig) -> Result<CaseStore> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(cfg.seed, "synth"));
    let (start, end) = cfg.date_span;
    let span = cfg.span_days();
    let (arrival_rate, scale) = cfg.daily_rates();
    let closure_rate = cfg.monthly_closures / MONTH_DAYS as f64 * scale;
    let alternative_rate = cfg.monthly_alternative / MONTH_DAYS as f64 * scale;

    let units: Vec<Unit> = Unit::ALL[..cfg.unit_count].to_vec();
    let lawyers: Vec<Vec<String>> = units
        .iter()
        .enumerate()
        .map(|(ui, _)| {
            (0..cfg.lawyer_count)
                .filter(|l| l % cfg.unit_count == ui)
                .map(|l| format!("L{:04}", l + 1))
                .collect()
        })
        .collect();
    let categories: Vec<(usize, f64)> = cfg.crime_mix.values().copied().enumerate().collect();
    let category_names: Vec<&String> = cfg.crime_mix.keys().collect();
    let offsets: Vec<f64> = (0..category_names.len())
        .map(|_| cfg.category_effect * normal(&mut rng))
        .collect();
    let municipalities: Vec<(usize, f64)> = (0..cfg.municipality_count).map(|m| (m, 1.0 / (m as f64 + 1.0))).collect();
    let intake: Vec<(usize, f64)> = if units.len() == 1 {
        vec![(0, 1.0)]
    } else {
        let rest = (1.0 - cfg.mat_share) / (units.len() - 1) as f64;
        (0..units.len()).map(|u| (u, if u == 0 { cfg.mat_share } else { rest })).collect()
    };
    let centre = libm::log1p(3.0 * cfg.monthly_events);
    let transfer_logit = if cfg.transfer_rate <= 0.0 {
        f64::NEG_INFINITY
    } else if cfg.transfer_rate >= 1.0 {
        f64::INFINITY
    } else {
        libm::log(cfg.transfer_rate / (1.0 - cfg.transfer_rate))
    };

    // arrival days, per 30-day block
    let mut arrivals: Vec<i32> = Vec::new();
    let mut block = 0;
    while block < span {
        let to = (block + MONTH_DAYS).min(span);
        for _ in 0..quota(arrival_rate, block, to) {
            arrivals.push(rng.gen_range(block..to));
        }
        block = to;
    }
    arrivals.sort_unstable();

    let mut cases: Vec<SimCase> = Vec::with_capacity(arrivals.len());
    let mut open: Vec<usize> = Vec::new();
    let mut next_arrival = 0;
    let mut week_start = 0;
    while week_start < span {
        let week_end = (week_start + 7).min(span);
        let last_day = start.plus(week_end - 1);

        while next_arrival < arrivals.len() && arrivals[next_arrival] < week_end {
            let day = start.plus(arrivals[next_arrival]);
            let ui = pick(&mut rng, &intake);
            let cat = pick(&mut rng, &categories);
            let muni = pick(&mut rng, &municipalities);
            let pool = &lawyers[ui];
            let lawyer = pool[rng.gen_range(0..pool.len())].clone();
            let arrested = rng.gen::<f64>() < 0.1;
            let crime_date = (rng.gen::<f64>() < 0.9).then(|| day.minus(rng.gen_range(0..90)));
            let rate = cfg.monthly_events * libm::exp(0.9 * normal(&mut rng) - 0.405);
            let id = format!("C{:06}", next_arrival + 1);
            let record = CaseRecord {
                case_id: id,
                opened_at: day,
                crime_category: category_names[cat].clone(),
                municipality: format!("M{:02}", muni + 1),
                unit: units[ui],
                lawyer_id: lawyer.clone(),
                arrested_at_intake: arrested,
                closed_at: None,
                closure_kind: None,
                crime_date,
            };
            let mut c = SimCase {
                record,
                events: Vec::new(),
                rate,
                unit: units[ui],
                lawyer,
                offset: offsets[cat] + if arrested { ARREST_EFFECT } else { 0.0 },
                recent: VecDeque::new(),
                open: true,
            };
            c.push(EventType::Initialized, day, None, None);
            open.push(cases.len());
            cases.push(c);
            next_arrival += 1;
        }

        // activity
        for &ci in &open {
            let c = &mut cases[ci];
            let first = c.record.opened_at.days_since(start).max(week_start);
            let days = week_end - first;
            if rng.gen::<f64>() < REASSIGN_RATE {
                let pool = &lawyers[units.iter().position(|u| *u == c.unit).expect("unit in use")];
                c.lawyer = pool[rng.gen_range(0..pool.len())].clone();
            }
            let n = poisson(&mut rng, c.rate * days as f64 / MONTH_DAYS as f64);
            let mut drawn: Vec<(i32, EventType)> = (0..n)
                .map(|_| (rng.gen_range(first..week_end), pick(&mut rng, &ACTIVITY_EVENTS)))
                .collect();
            drawn.sort_by_key(|(d, _)| *d);
            for (d, ty) in drawn {
                c.push(ty, start.plus(d), None, None);
            }
        }

        // per-case log-odds shared by transfers and closures
        let scores: Vec<f64> = open
            .iter()
            .map(|&ci| {
                let c = &mut cases[ci];
                let age = last_day.days_since(c.record.opened_at);
                let r = c.recent_count(last_day) as f64;
                cfg.activity_effect * (libm::log1p(r) - centre) + c.offset
                    - AGE_EFFECT * (age - YEAR_DAYS).max(0) as f64 / YEAR_DAYS as f64
            })
            .collect();

        let mut moved = vec![false; open.len()];
        if units.len() > 1 {
            for (k, &ci) in open.iter().enumerate() {
                if cases[ci].unit != Unit::Mat {
                    continue;
                }
                if rng.gen::<f64>() < sigmoid(transfer_logit + scores[k]) {
                    let to_i = rng.gen_range(1..units.len());
                    let c = &mut cases[ci];
                    let to = units[to_i];
                    c.push(EventType::UnitTransfer, last_day, Some(Unit::Mat), Some(to));
                    c.unit = to;
                    let pool = &lawyers[to_i];
                    c.lawyer = pool[rng.gen_range(0..pool.len())].clone();
                    c.push(EventType::Initialized, last_day, None, None);
                    moved[k] = true;
                }
            }
        }

        let n_close = quota(closure_rate, week_start, week_end);
        let n_alt = quota(alternative_rate, week_start, week_end);
        // Efraimidis-Spirakis keys: ln(u) / w, largest keys win
        let mut keyed: Vec<(f64, usize)> = open
            .iter()
            .enumerate()
            .filter(|(k, _)| !moved[*k])
            .map(|(k, &ci)| {
                let u = 1.0 - rng.gen::<f64>();
                (libm::log(u) / libm::exp(scores[k]), ci)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let total = (n_close + n_alt).min(keyed.len());
        let mut chosen: Vec<usize> = keyed[..total].iter().map(|(_, ci)| *ci).collect();
        chosen.sort_unstable();
        let p_alt = if n_close + n_alt == 0 { 0.0 } else { n_alt as f64 / (n_close + n_alt) as f64 };
        for ci in chosen {
            let alt = rng.gen::<f64>() < p_alt;
            let u = rng.gen::<f64>();
            let c = &mut cases[ci];
            let kind = if alt {
                c.push(EventType::Milestone(Milestone::AlternativeMechanism), last_day, None, None);
                ClosureKind::AlternativeMechanism
            } else if u < 0.05 {
                ClosureKind::TransferOut
            } else if u < 0.35 {
                ClosureKind::JudicialResolution
            } else {
                ClosureKind::AdministrativeClosure
            };
            c.push(EventType::Closure, last_day, None, None);
            c.record.closed_at = Some(last_day);
            c.record.closure_kind = Some(kind);
            c.open = false;
        }
        open.retain(|&ci| cases[ci].open);
        week_start = week_end;
    }

    let mut records = Vec::with_capacity(cases.len());
    let mut events = Vec::new();
    for mut c in cases {
        c.record.lawyer_id = c.lawyer;
        records.push(c.record);
        events.extend(c.events);
    }
    CaseStore::from_parts(records, events, Some(end))
}

/// Generates and saves a store directory (`cases.csv`, `events.csv`,
/// `store.toml`).
pub fn generate_to(cfg: &SynthConfig, dir: &Path) -> Result<CaseStore> {
    let store = generate(cfg)?;
    store.save(dir)?;
    Ok(store)
}

/// Ages a seeded `fraction` of the cases open at extraction: each selected
/// case is re-anchored at least `min_age_days` before extraction, loses its
/// transfer history (it stays in its current unit) and keeps only activity
/// that falls outside the trailing half-year.
pub fn plant_prescription_tail(store: &CaseStore, fraction: f64, min_age_days: i32, seed: u64) -> Result<CaseStore> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TriageError::Config(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if store.is_empty() {
        return Err(TriageError::Data("cannot plant a tail in an empty store".into()));
    }
    if min_age_days < 0 {
        return Err(TriageError::Config("min_age_days must be >= 0".into()));
    }
    let extraction = store.extraction_date();
    let mut candidates = store.open_any_indices(extraction);
    let n = libm::round(fraction * candidates.len() as f64) as usize;
    if n == 0 {
        return Ok(store.clone());
    }
    let mut rng = rng_from(derive_seed(seed, "plant_prescription_tail"));
    candidates.shuffle(&mut rng);
    let cutoff = extraction.minus(HALF_YEAR_DAYS);
    let mut replacements = Vec::with_capacity(n);
    for &idx in &candidates[..n] {
        let old = store.case(idx);
        let opened = extraction.minus(min_age_days + 1 + rng.gen_range(0..YEAR_DAYS));
        let delta = old.opened_at.days_since(opened);
        let unit = store.unit_at_idx(idx, extraction).unwrap_or(old.unit);
        let lawyer = store
            .events_of(idx)
            .last()
            .map(|e| e.actor_lawyer.clone())
            .unwrap_or_else(|| old.lawyer_id.clone());
        let mut record = old.clone();
        record.opened_at = opened;
        record.unit = unit;
        record.lawyer_id = lawyer.clone();
        record.crime_date = old.crime_date.map(|d| d.minus(delta));
        let mut events = vec![ProceduralEvent {
            case_id: old.case_id.clone(),
            seq: 0,
            event_type: EventType::Initialized,
            occurred_at: opened,
            actor_lawyer: lawyer,
            from_unit: None,
            to_unit: None,
        }];
        for e in store.events_of(idx) {
            if matches!(e.event_type, EventType::Initialized | EventType::UnitTransfer | EventType::Closure) {
                continue;
            }
            let day = e.occurred_at.minus(delta);
            if day > cutoff || day < opened {
                continue;
            }
            let mut e = e.clone();
            e.seq = events.len() as u32;
            e.occurred_at = day;
            events.push(e);
        }
        replacements.push((record, events));
    }
    store.with_replaced(replacements)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_cases: 800,
            date_span: (Day::from_ymd(2021, 1, 1), Day::from_ymd(2021, 12, 31)),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate(&small(7)).unwrap();
        let b = generate(&small(7)).unwrap();
        assert_eq!(a.case_rows(), b.case_rows());
        assert_eq!(a.event_rows(), b.event_rows());
        let c = generate(&small(8)).unwrap();
        assert_ne!(a.event_rows(), c.event_rows());
    }

    #[test]
    fn exact_case_count_and_span() {
        let s = generate(&small(3)).unwrap();
        assert_eq!(s.len(), 800);
        assert_eq!(s.extraction_date(), Day::from_ymd(2021, 12, 31));
        assert!(s.cases().iter().all(|c| c.opened_at >= Day::from_ymd(2021, 1, 1)));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small(1);
        c.date_span = (Day::from_ymd(2021, 1, 1), Day::from_ymd(2021, 1, 1));
        assert!(matches!(generate(&c), Err(TriageError::Config(_))));
        let mut c = small(1);
        c.crime_mix.insert("EXTRA".into(), 0.01);
        assert!(matches!(generate(&c), Err(TriageError::Config(_))));
        let mut c = small(1);
        c.monthly_closures = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn quota_partitions_exactly() {
        let rate = 1831.0 / 30.0;
        let total: usize = (0..52).map(|w| quota(rate, w * 7, w * 7 + 7)).sum();
        assert_eq!(total, quota(rate, 0, 364));
    }

    #[test]
    fn toml_round_trip() {
        let c = small(5);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(SynthConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn plant_zero_is_identity() {
        let s = generate(&small(2)).unwrap();
        let p = plant_prescription_tail(&s, 0.0, 4000, 1).unwrap();
        assert_eq!(s.case_rows(), p.case_rows());
        assert!(plant_prescription_tail(&s, 1.5, 10, 1).is_err());
    }

    #[test]
    fn plant_saturates() {
        let s = generate(&small(2)).unwrap();
        let e = s.extraction_date();
        let p = plant_prescription_tail(&s, 1.0, 4000, 1).unwrap();
        let open = p.open_any_indices(e);
        assert!(!open.is_empty());
        for i in open {
            assert!(e.days_since(p.case(i).opened_at) > 4000);
            assert!(p.events_of(i).iter().all(|ev| ev.occurred_at <= e.minus(HALF_YEAR_DAYS)));
        }
    }
}
