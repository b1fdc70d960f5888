//! Model families behind one fit/score interface.
//!
//! * `decision_tree`: a single CART tree over all features.
//! * `random_forest`: bootstrap resamples, `sqrt(p)` candidate features per split.
//! * `extra_trees`: random thresholds, no bootstrap, `sqrt(p)` candidates.
//! * `scaled_logistic`: standardization, then L2 logistic regression.
//! * `dummy`: a uniform score hashed from the seed, case and date.
//!
//! Forest trees get their own stream seeded from the master seed and the
//! tree index, so fitted forests do not depend on the thread count.

pub mod logistic;
pub mod tree;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::date::Day;
use crate::error::{Result, TriageError};
use crate::features::{schema_hash, FeatureVector};
use crate::par;
use crate::rng::{derive_indexed, derive_seed, fnv1a64, rng_from, splitmix64, unit_interval};

use logistic::LogisticModel;
use tree::{Columns, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DecisionTree,
    RandomForest,
    ExtraTrees,
    ScaledLogistic,
    Dummy,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::DecisionTree,
        Family::RandomForest,
        Family::ExtraTrees,
        Family::ScaledLogistic,
        Family::Dummy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::ExtraTrees => "extra_trees",
            Family::ScaledLogistic => "scaled_logistic",
            Family::Dummy => "dummy",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(self, Family::DecisionTree | Family::RandomForest | Family::ExtraTrees)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = TriageError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| TriageError::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub n_trees: usize,
    /// Candidate features per split; `None` is `sqrt(p)` for forests and
    /// all features for a single tree.
    pub max_features: Option<usize>,
    /// `None` is the family default (on for random forests, off otherwise).
    pub bootstrap: Option<bool>,
    pub l2: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            max_depth: None,
            min_samples_leaf: 5,
            n_trees: 100,
            max_features: None,
            bootstrap: None,
            l2: 0.1,
            tolerance: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, hyperparameters: Hyperparameters, seed: u64) -> ModelSpec {
        ModelSpec { family, hyperparameters, seed }
    }

    /// Short label naming the family and the knobs that matter for it.
    pub fn tag(&self) -> String {
        let h = &self.hyperparameters;
        let depth = h.max_depth.map_or("inf".to_string(), |d| d.to_string());
        match self.family {
            Family::DecisionTree => format!("decision_tree[depth={depth},leaf={}]", h.min_samples_leaf),
            Family::RandomForest | Family::ExtraTrees => {
                format!("{}[trees={},depth={depth},leaf={}]", self.family, h.n_trees, h.min_samples_leaf)
            }
            Family::ScaledLogistic => format!("scaled_logistic[l2={}]", h.l2),
            Family::Dummy => "dummy".to_string(),
        }
    }

    /// Ordering key for "simpler" specs: fewer trees, shallower, smaller L2.
    pub fn complexity(&self) -> (usize, usize, u64) {
        let h = &self.hyperparameters;
        let trees = match self.family {
            Family::RandomForest | Family::ExtraTrees => h.n_trees,
            _ => 0,
        };
        let depth = match self.family {
            Family::ScaledLogistic | Family::Dummy => 0,
            _ => h.max_depth.unwrap_or(usize::MAX),
        };
        let l2 = if self.family == Family::ScaledLogistic { h.l2.to_bits() } else { 0 };
        (trees, depth, l2)
    }
}

/// The declared search grid per family.
pub fn grid(family: Family, seed: u64) -> Vec<ModelSpec> {
    let depths = [Some(5), Some(10), None];
    let mut out = Vec::new();
    match family {
        Family::DecisionTree => {
            for d in depths {
                for leaf in [5, 20] {
                    let h = Hyperparameters { max_depth: d, min_samples_leaf: leaf, ..Default::default() };
                    out.push(ModelSpec::new(family, h, seed));
                }
            }
        }
        Family::RandomForest | Family::ExtraTrees => {
            for trees in [100, 300] {
                for d in depths {
                    let h = Hyperparameters { n_trees: trees, max_depth: d, ..Default::default() };
                    out.push(ModelSpec::new(family, h, seed));
                }
            }
        }
        Family::ScaledLogistic => {
            for l2 in [0.01, 0.1, 1.0] {
                out.push(ModelSpec::new(family, Hyperparameters { l2, ..Default::default() }, seed));
            }
        }
        Family::Dummy => out.push(ModelSpec::new(family, Hyperparameters::default(), seed)),
    }
    out
}

#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: bool,
    pub observation_date: Day,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelState {
    Tree { tree: Tree },
    Forest { trees: Vec<Tree> },
    Logistic { model: LogisticModel },
    Dummy,
}

const MODEL_FORMAT: &str = "triage-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub family: Family,
    pub schema_hash: String,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub trained_through: Day,
    pub feature_names: Vec<String>,
    pub importances: Vec<f64>,
    pub state: ModelState,
}

/// Training rows in both layouts.
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub rows: Vec<f64>,
    pub cols: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl Design {
    pub fn new(rows: Vec<f64>, p: usize, labels: Vec<bool>) -> Design {
        let n = labels.len();
        assert_eq!(rows.len(), n * p, "row buffer must be n × p");
        let mut cols = vec![Vec::with_capacity(n); p];
        for row in rows.chunks_exact(p.max(1)).take(n) {
            for (c, v) in cols.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        Design { n, p, rows, cols, labels }
    }

    pub fn from_examples(examples: &[LabeledExample]) -> Result<(Design, Vec<String>)> {
        let first = examples
            .first()
            .ok_or_else(|| TriageError::Data("no training examples".into()))?;
        let names = first.features.names().to_vec();
        let p = names.len();
        let mut rows = Vec::with_capacity(examples.len() * p);
        for ex in examples {
            if ex.features.names() != names.as_slice() {
                return Err(schema_mismatch(&names, ex.features.names()));
            }
            rows.extend_from_slice(&ex.features.values);
        }
        let labels = examples.iter().map(|e| e.label).collect();
        Ok((Design::new(rows, p, labels), names))
    }
}

fn schema_mismatch(expected: &[String], got: &[String]) -> TriageError {
    let missing: Vec<String> = expected.iter().filter(|n| !got.contains(n)).cloned().collect();
    let extra: Vec<String> = got.iter().filter(|n| !expected.contains(n)).cloned().collect();
    TriageError::SchemaMismatch { missing, extra }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
        v
    } else {
        let n = v.len().max(1) as f64;
        v.iter().map(|_| 1.0 / n).collect()
    }
}

fn sqrt_features(p: usize) -> usize {
    ((p as f64).sqrt().floor() as usize).max(1)
}

/// Fits `spec` on examples sharing one schema.
pub fn fit(spec: &ModelSpec, examples: &[LabeledExample], trained_through: Day) -> Result<TrainedModel> {
    let (design, names) = Design::from_examples(examples)?;
    fit_design(spec, &design, names, trained_through)
}

pub fn fit_design(spec: &ModelSpec, design: &Design, names: Vec<String>, trained_through: Day) -> Result<TrainedModel> {
    let h = &spec.hyperparameters;
    let p = design.p;
    let positives = design.labels.iter().filter(|l| **l).count();
    if spec.family != Family::Dummy {
        if design.n < 2 {
            return Err(TriageError::Data(format!(
                "{} needs at least 2 training examples, got {}",
                spec.family, design.n
            )));
        }
        if positives == 0 || positives == design.n {
            return Err(TriageError::Data(format!(
                "{} refuses a single-class training set ({} examples, all {})",
                spec.family,
                design.n,
                if positives == 0 { "negative" } else { "positive" }
            )));
        }
    }
    let data = Columns { cols: &design.cols, labels: &design.labels };
    let (state, importances) = match spec.family {
        Family::DecisionTree => {
            let params = TreeParams {
                max_depth: h.max_depth,
                min_samples_leaf: h.min_samples_leaf,
                max_features: h.max_features.unwrap_or(p),
                random_thresholds: false,
            };
            let mut rng = rng_from(derive_seed(spec.seed, "decision_tree"));
            let (tree, imp) = Tree::grow(&data, (0..design.n as u32).collect(), &params, &mut rng);
            (ModelState::Tree { tree }, normalize(imp))
        }
        Family::RandomForest | Family::ExtraTrees => {
            let extra = spec.family == Family::ExtraTrees;
            let params = TreeParams {
                max_depth: h.max_depth,
                min_samples_leaf: h.min_samples_leaf,
                max_features: h.max_features.unwrap_or_else(|| sqrt_features(p)),
                random_thresholds: extra,
            };
            let bootstrap = h.bootstrap.unwrap_or(!extra);
            let n = design.n;
            let master = derive_seed(spec.seed, spec.family.as_str());
            let grown = par::map_range(h.n_trees.max(1), |t| {
                let mut rng = rng_from(derive_indexed(master, t as u64));
                let samples: Vec<u32> = if bootstrap {
                    use rand::Rng;
                    (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
                } else {
                    (0..n as u32).collect()
                };
                Tree::grow(&data, samples, &params, &mut rng)
            });
            let mut imp = vec![0.0; p];
            let mut trees = Vec::with_capacity(grown.len());
            for (tree, raw) in grown {
                let total: f64 = raw.iter().sum();
                if total > 0.0 {
                    for (acc, r) in imp.iter_mut().zip(&raw) {
                        *acc += r / total;
                    }
                }
                trees.push(tree);
            }
            (ModelState::Forest { trees }, normalize(imp))
        }
        Family::ScaledLogistic => {
            let model = LogisticModel::fit(&design.rows, &design.labels, p, h.l2, h.tolerance, h.max_iter);
            let imp = model.importances();
            (ModelState::Logistic { model }, imp)
        }
        Family::Dummy => (ModelState::Dummy, vec![1.0 / p.max(1) as f64; p]),
    };
    Ok(TrainedModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        family: spec.family,
        schema_hash: schema_hash(&names),
        hyperparameters: h.clone(),
        seed: spec.seed,
        trained_through,
        feature_names: names,
        importances,
        state,
    })
}

/// Uniform score in [0, 1) for the dummy selector.
pub fn dummy_score(seed: u64, case_id: &str, as_of: Day) -> f64 {
    let h = splitmix64(derive_seed(seed, "dummy") ^ fnv1a64(case_id.as_bytes()) ^ splitmix64(as_of.0 as u64));
    unit_interval(h)
}

impl TrainedModel {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.family, self.hyperparameters.clone(), self.seed)
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        match &self.state {
            ModelState::Tree { tree } => tree.predict(row),
            ModelState::Forest { trees } => trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64,
            ModelState::Logistic { model } => model.predict(row),
            ModelState::Dummy => unreachable!("dummy scores need case identity"),
        }
    }

    /// Scores in [0, 1], one per vector, in input order.
    pub fn score(&self, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
        if self.family == Family::Dummy {
            return Ok(vectors.iter().map(|v| dummy_score(self.seed, &v.case_id, v.as_of)).collect());
        }
        let mut order: Option<Vec<usize>> = None;
        if let Some(v) = vectors.first() {
            if v.names() != self.feature_names.as_slice() {
                let err = schema_mismatch(&self.feature_names, v.names());
                if let TriageError::SchemaMismatch { missing, extra } = &err {
                    if !missing.is_empty() || !extra.is_empty() {
                        return Err(err);
                    }
                }
                let pos: HashMap<&str, usize> =
                    v.names().iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
                order = Some(self.feature_names.iter().map(|n| pos[n.as_str()]).collect());
            }
        }
        for v in vectors.iter().skip(1) {
            if !std::sync::Arc::ptr_eq(&v.schema, &vectors[0].schema) && v.names() != vectors[0].names() {
                return Err(schema_mismatch(vectors[0].names(), v.names()));
            }
        }
        Ok(par::map(vectors, |v| match &order {
            None => self.score_row(&v.values),
            Some(idx) => {
                let row: Vec<f64> = idx.iter().map(|&i| v.values[i]).collect();
                self.score_row(&row)
            }
        }))
    }

    /// Scores raw rows laid out in `feature_names` order.
    pub fn score_rows(&self, rows: &[f64]) -> Vec<f64> {
        let p = self.feature_names.len();
        rows.chunks_exact(p).map(|r| self.score_row(r)).collect()
    }

    pub fn importance_map(&self) -> BTreeMap<String, f64> {
        self.feature_names.iter().cloned().zip(self.importances.iter().copied()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| TriageError::Internal(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| TriageError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        if !path.exists() {
            return Err(TriageError::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| TriageError::io(path, e))?;
        let model: TrainedModel =
            serde_json::from_str(&text).map_err(|e| TriageError::Data(format!("{}: {e}", path.display())))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(TriageError::Data(format!(
                "{}: unsupported model file {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        if schema_hash(&model.feature_names) != model.schema_hash {
            return Err(TriageError::Data(format!("{}: schema hash does not match feature list", path.display())));
        }
        Ok(model)
    }
}

/// Sums per-feature importances within each group. Features without a group
/// fall under `"other"`; the result is renormalized to sum to one.
pub fn importance_by_group(
    importances: &BTreeMap<String, f64>,
    group_of: &HashMap<String, String>,
) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (name, v) in importances {
        let g = group_of.get(name).cloned().unwrap_or_else(|| "other".into());
        *out.entry(g).or_default() += v;
    }
    let total: f64 = out.values().sum();
    if total > 0.0 {
        for v in out.values_mut() {
            *v /= total;
        }
    }
    out
}
