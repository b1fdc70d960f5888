//! CART classification trees with Gini impurity.
//!
//! A split sends `x <= threshold` left. For exact splits the threshold is the
//! midpoint between consecutive distinct values; extremely randomized splits
//! draw it uniformly between the node's minimum and maximum. Among
//! candidates the lowest weighted child impurity wins, ties keep the first
//! candidate found (feature order, then ascending threshold).

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { positives: u32, total: u32 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `>= p` means all, in column order.
    pub max_features: usize,
    pub random_thresholds: bool,
}

/// Column-major feature matrix with boolean labels.
pub struct Columns<'a> {
    pub cols: &'a [Vec<f64>],
    pub labels: &'a [bool],
}

impl Columns<'_> {
    fn n_features(&self) -> usize {
        self.cols.len()
    }
}

/// `n * gini(n, pos)`, i.e. `n - (pos² + neg²) / n`.
pub fn weighted_gini(n: f64, pos: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let neg = n - pos;
    n - (pos * pos + neg * neg) / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted child impurity `n_l·G_l + n_r·G_r`.
    pub impurity: f64,
}

/// Best exact split of `samples` on `feature`, honoring `min_leaf`.
pub fn best_exact_split(data: &Columns<'_>, samples: &[u32], feature: usize, min_leaf: usize) -> Option<SplitChoice> {
    let col = &data.cols[feature];
    let mut pairs: Vec<(f64, bool)> = samples
        .iter()
        .map(|&i| (col[i as usize], data.labels[i as usize]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    if n < 2 || pairs[0].0 == pairs[n - 1].0 {
        return None;
    }
    let total_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let min_leaf = min_leaf.max(1);
    let mut best: Option<SplitChoice> = None;
    let mut left_pos = 0.0;
    for i in 1..n {
        if pairs[i - 1].1 {
            left_pos += 1.0;
        }
        if i < min_leaf || n - i < min_leaf || pairs[i - 1].0 == pairs[i].0 {
            continue;
        }
        let nl = i as f64;
        let nr = (n - i) as f64;
        let impurity = weighted_gini(nl, left_pos) + weighted_gini(nr, total_pos - left_pos);
        if best.is_none_or(|b| impurity < b.impurity) {
            let (lo, hi) = (pairs[i - 1].0, pairs[i].0);
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some(SplitChoice { feature, threshold, impurity });
        }
    }
    best
}

fn random_split(
    data: &Columns<'_>,
    samples: &[u32],
    feature: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Option<SplitChoice> {
    let col = &data.cols[feature];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in samples {
        let v = col[i as usize];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo >= hi {
        return None;
    }
    let mut threshold = lo + rng.gen::<f64>() * (hi - lo);
    if threshold >= hi {
        threshold = lo;
    }
    let (mut nl, mut pl, mut pos) = (0usize, 0usize, 0usize);
    for &i in samples {
        let y = data.labels[i as usize];
        pos += y as usize;
        if col[i as usize] <= threshold {
            nl += 1;
            pl += y as usize;
        }
    }
    let nr = samples.len() - nl;
    let min_leaf = min_leaf.max(1);
    if nl < min_leaf || nr < min_leaf {
        return None;
    }
    let impurity = weighted_gini(nl as f64, pl as f64) + weighted_gini(nr as f64, (pos - pl) as f64);
    Some(SplitChoice { feature, threshold, impurity })
}

struct Pending {
    node: usize,
    samples: Vec<u32>,
    depth: usize,
}

impl Tree {
    /// Grows a tree on `samples` (row indices, repeats allowed). Returns the
    /// tree and the unnormalized impurity decrease per feature.
    pub fn grow(data: &Columns<'_>, samples: Vec<u32>, params: &TreeParams, rng: &mut ChaCha8Rng) -> (Tree, Vec<f64>) {
        let p = data.n_features();
        let mut importance = vec![0.0; p];
        let mut nodes = vec![Node::Leaf { positives: 0, total: 0 }];
        let mut stack = vec![Pending { node: 0, samples, depth: 0 }];
        let min_leaf = params.min_samples_leaf.max(1);
        while let Some(Pending { node, samples, depth }) = stack.pop() {
            let n = samples.len();
            let pos = samples.iter().filter(|&&i| data.labels[i as usize]).count();
            let leaf = Node::Leaf { positives: pos as u32, total: n as u32 };
            let depth_done = params.max_depth.is_some_and(|d| depth >= d);
            if pos == 0 || pos == n || depth_done || n < 2 * min_leaf {
                nodes[node] = leaf;
                continue;
            }
            let candidates: Vec<usize> = if params.max_features >= p {
                (0..p).collect()
            } else {
                let mut c = sample(rng, p, params.max_features.max(1)).into_vec();
                c.sort_unstable();
                c
            };
            let mut best: Option<SplitChoice> = None;
            for f in candidates {
                let choice = if params.random_thresholds {
                    random_split(data, &samples, f, min_leaf, rng)
                } else {
                    best_exact_split(data, &samples, f, min_leaf)
                };
                if let Some(c) = choice {
                    if best.is_none_or(|b| c.impurity < b.impurity) {
                        best = Some(c);
                    }
                }
            }
            let parent = weighted_gini(n as f64, pos as f64);
            let Some(split) = best.filter(|b| parent - b.impurity > 1e-12) else {
                nodes[node] = leaf;
                continue;
            };
            importance[split.feature] += parent - split.impurity;
            let col = &data.cols[split.feature];
            let (left, right): (Vec<u32>, Vec<u32>) =
                samples.into_iter().partition(|&i| col[i as usize] <= split.threshold);
            let li = nodes.len();
            nodes.push(Node::Leaf { positives: 0, total: 0 });
            nodes.push(Node::Leaf { positives: 0, total: 0 });
            nodes[node] = Node::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: li as u32,
                right: li as u32 + 1,
            };
            stack.push(Pending { node: li + 1, samples: right, depth: depth + 1 });
            stack.push(Pending { node: li, samples: left, depth: depth + 1 });
        }
        (Tree { nodes }, importance)
    }

    /// Positive frequency of the leaf `row` falls into.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { positives, total } => {
                    return if total == 0 { 0.0 } else { positives as f64 / total as f64 };
                }
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn params(depth: Option<usize>) -> TreeParams {
        TreeParams { max_depth: depth, min_samples_leaf: 1, max_features: usize::MAX, random_thresholds: false }
    }

    #[test]
    fn pure_split_depth_one() {
        let cols = vec![vec![0.0, 1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0, 5.0]];
        let labels = [false, false, true, true];
        let data = Columns { cols: &cols, labels: &labels };
        let (t, imp) = Tree::grow(&data, (0..4).collect(), &params(None), &mut rng_from(1));
        assert_eq!(t.depth(), 1);
        assert_eq!(imp[1], 0.0);
        assert!(imp[0] > 0.0);
        assert_eq!(t.predict(&[0.5, 5.0]), 0.0);
        assert_eq!(t.predict(&[2.5, 5.0]), 1.0);
        match t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 1.5);
            }
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn leaf_frequency() {
        // depth 1: x <= 0.5 holds 3 positives and 1 negative
        let cols = vec![vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]];
        let labels = [true, true, true, false, false, false, false, false];
        let data = Columns { cols: &cols, labels: &labels };
        let (t, _) = Tree::grow(&data, (0..8).collect(), &params(Some(1)), &mut rng_from(1));
        assert_eq!(t.predict(&[0.0]), 0.75);
        assert_eq!(t.predict(&[1.0]), 0.0);
    }

    #[test]
    fn min_leaf_respected() {
        let cols = vec![(0..10).map(|i| i as f64).collect::<Vec<_>>()];
        let labels: Vec<bool> = (0..10).map(|i| i == 0).collect();
        let data = Columns { cols: &cols, labels: &labels };
        let p = TreeParams { min_samples_leaf: 3, ..params(None) };
        let (t, _) = Tree::grow(&data, (0..10).collect(), &p, &mut rng_from(1));
        for n in &t.nodes {
            if let Node::Leaf { total, .. } = n {
                assert!(*total >= 3);
            }
        }
    }

    #[test]
    fn constant_features_give_single_leaf() {
        let cols = vec![vec![1.0; 6]];
        let labels = [true, false, true, false, true, false];
        let data = Columns { cols: &cols, labels: &labels };
        let (t, imp) = Tree::grow(&data, (0..6).collect(), &params(None), &mut rng_from(1));
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[1.0]), 0.5);
        assert_eq!(imp, vec![0.0]);
    }
}
