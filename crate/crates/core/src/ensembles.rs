//! Random forest and second-order gradient-boosted trees over flattened
//! windows.
//!
//! Split candidates are midpoints between consecutive distinct values; a
//! row goes left when its value is below the threshold. Ties in gain go to
//! the lowest feature index, then the lowest threshold.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::par;
use crate::seqnet::sigmoid;

const MODEL_VERSION: u32 = 1;
/// Below this many (row, feature) pairs a node is searched sequentially.
const PAR_SPLIT_WORK: usize = 32_768;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("training data holds a single class")]
    SingleClassTraining,
    #[error("no training samples")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("model expects {expected} features, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// `value` is the positive-class frequency (forest) or Newton leaf
    /// weight (boosting); `weight` is the sample count or hessian sum.
    Leaf { value: f64, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] < threshold { left } else { right };
                }
                Node::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// What a tree is fit against.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Gini impurity decrease on binary labels.
    Class(&'a [u8]),
    /// Second-order gain on per-row gradients and hessians.
    Newton { g: &'a [f64], h: &'a [f64], lambda: f64, gamma: f64, min_child_weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` uses all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    n: f64,
    a: f64,
    b: f64,
}

impl Stats {
    fn add(&mut self, t: &Targets, r: usize) {
        self.n += 1.0;
        match t {
            Targets::Class(y) => self.a += f64::from(y[r]),
            Targets::Newton { g, h, .. } => {
                self.a += g[r];
                self.b += h[r];
            }
        }
    }

    fn sub(&self, o: &Stats) -> Stats {
        Stats { n: self.n - o.n, a: self.a - o.a, b: self.b - o.b }
    }
}

/// Weighted Gini impurity `n * (1 - p1^2 - p0^2)` or negative Newton score.
fn node_cost(t: &Targets, s: &Stats) -> f64 {
    match t {
        Targets::Class(_) => {
            let pos = s.a;
            let neg = s.n - s.a;
            s.n - (pos * pos + neg * neg) / s.n
        }
        Targets::Newton { lambda, .. } => -0.5 * s.a * s.a / (s.b + lambda),
    }
}

fn leaf(t: &Targets, s: &Stats) -> Node {
    match t {
        Targets::Class(_) => Node::Leaf { value: s.a / s.n, weight: s.n },
        Targets::Newton { lambda, .. } => Node::Leaf { value: -s.a / (s.b + lambda), weight: s.b },
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Row ids of every column sorted by value (ties by row id). Built once
/// per ensemble fit and shared by its trees.
pub struct SortedColumns {
    cols: Vec<Vec<(f64, u32)>>,
}

impl SortedColumns {
    pub fn new(x: &Matrix) -> Self {
        assert!(x.rows() <= u32::MAX as usize, "too many rows");
        let cols = par::map_range(x.cols(), |f| {
            let mut c: Vec<(f64, u32)> = (0..x.rows()).map(|r| (x.get(r, f), r as u32)).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
            c
        });
        Self { cols }
    }
}

/// Node values of feature `f` ascending, ties by row id, repeated rows
/// adjacent. Large nodes filter the presorted column; small ones sort
/// directly. Both give the same sequence.
fn sorted_values(x: &Matrix, node: &[usize], f: usize, sorted: &SortedColumns, count: &[u32]) -> Vec<(f64, usize)> {
    if node.len() * 8 >= x.rows() {
        let mut out = Vec::with_capacity(node.len());
        for &(v, r) in &sorted.cols[f] {
            for _ in 0..count[r as usize] {
                out.push((v, r as usize));
            }
        }
        out
    } else {
        let mut vals: Vec<(f64, usize)> = node.iter().map(|&r| (x.get(r, f), r)).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        vals
    }
}

fn best_for_feature(vals: &[(f64, usize)], f: usize, t: &Targets, params: &TreeParams, total: &Stats) -> Option<Candidate> {
    let parent = node_cost(t, total);
    let msl = params.min_samples_leaf.max(1) as f64;
    let mut left = Stats::default();
    let mut best: Option<Candidate> = None;
    for i in 0..vals.len() - 1 {
        left.add(t, vals[i].1);
        if vals[i].0 == vals[i + 1].0 {
            continue;
        }
        let right = total.sub(&left);
        if left.n < msl || right.n < msl {
            continue;
        }
        let gain = match t {
            Targets::Newton { min_child_weight, gamma, .. } => {
                if left.b < *min_child_weight || right.b < *min_child_weight {
                    continue;
                }
                parent - node_cost(t, &left) - node_cost(t, &right) - gamma
            }
            Targets::Class(_) => parent - node_cost(t, &left) - node_cost(t, &right),
        };
        if gain > MIN_GAIN && best.is_none_or(|b| gain > b.gain) {
            best = Some(Candidate { feature: f, threshold: split_threshold(vals[i].0, vals[i + 1].0), gain });
        }
    }
    best
}

struct Builder<'a, R: Rng> {
    x: &'a Matrix,
    sorted: &'a SortedColumns,
    /// Multiplicity of each row in the node being split.
    count: Vec<u32>,
    t: Targets<'a>,
    params: TreeParams,
    rng: Option<&'a mut R>,
    nodes: Vec<Node>,
}

impl<R: Rng> Builder<'_, R> {
    fn features(&mut self) -> Vec<usize> {
        let f = self.x.cols();
        match (self.params.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < f => {
                let mut v = sample(&mut **rng, f, m.max(1)).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..f).collect(),
        }
    }

    fn best_split(&mut self, node: &[usize], feats: &[usize], total: &Stats) -> Option<Candidate> {
        for &r in node {
            self.count[r] += 1;
        }
        let (x, sorted, count, t, params) = (self.x, self.sorted, &self.count, &self.t, &self.params);
        let eval = |&f: &usize| best_for_feature(&sorted_values(x, node, f, sorted, count), f, t, params, total);
        let per_feature: Vec<Option<Candidate>> = if node.len() * feats.len() >= PAR_SPLIT_WORK {
            par::map_slice(feats, eval)
        } else {
            feats.iter().map(eval).collect()
        };
        for &r in node {
            self.count[r] = 0;
        }
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let mut total = Stats::default();
        for &r in rows {
            total.add(&self.t, r);
        }
        let id = self.nodes.len();
        self.nodes.push(leaf(&self.t, &total));
        let pure = matches!(self.t, Targets::Class(_)) && (total.a == 0.0 || total.a == total.n);
        if depth >= self.params.max_depth || pure || rows.len() < 2 * self.params.min_samples_leaf.max(1) {
            return id;
        }
        let feats = self.features();
        let Some(c) = self.best_split(rows, &feats, &total) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.get(i, c.feature) < c.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right };
        id
    }
}

/// Greedy depth-first tree on `rows` (which may repeat, e.g. a bootstrap
/// sample). `rng` drives per-split feature sampling when `max_features` is
/// set.
pub fn fit_tree<R: Rng>(x: &Matrix, rows: &[usize], targets: Targets, params: TreeParams, rng: Option<&mut R>) -> DecisionTree {
    fit_tree_sorted(x, &SortedColumns::new(x), rows, targets, params, rng)
}

/// `fit_tree` with columns presorted by the caller.
pub fn fit_tree_sorted<R: Rng>(
    x: &Matrix,
    sorted: &SortedColumns,
    rows: &[usize],
    targets: Targets,
    params: TreeParams,
    rng: Option<&mut R>,
) -> DecisionTree {
    assert!(!rows.is_empty(), "fit_tree needs at least one row");
    let mut b = Builder { x, sorted, count: vec![0; x.rows()], t: targets, params, rng, nodes: Vec::new() };
    b.grow(rows, 0);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    #[default]
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub features_per_split: FeatureSubset,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 10,
            features_per_split: FeatureSubset::Sqrt,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub n_features: usize,
    pub hyper: ForestHyper,
    pub trees: Vec<DecisionTree>,
}

fn check_xy(x: &Matrix, y: &[u8]) -> Result<(), EnsembleError> {
    if x.rows() != y.len() {
        return Err(EnsembleError::LengthMismatch { rows: x.rows(), labels: y.len() });
    }
    if y.is_empty() {
        return Err(EnsembleError::Empty);
    }
    Ok(())
}

/// Trees are independent given per-tree seeds and are fit in parallel.
/// Single-class input is accepted; every leaf then carries that class.
pub fn fit_forest(x: &Matrix, y: &[u8], hyper: &ForestHyper) -> Result<ForestModel, EnsembleError> {
    check_xy(x, y)?;
    if hyper.n_estimators == 0 || hyper.max_depth == 0 {
        return Err(EnsembleError::InvalidHyper("n_estimators and max_depth must be >= 1".into()));
    }
    let n = y.len();
    let f = x.cols();
    let max_features = match hyper.features_per_split {
        FeatureSubset::Sqrt => Some(((f as f64).sqrt().floor() as usize).max(1)),
        FeatureSubset::All => None,
    };
    let params = TreeParams { max_depth: hyper.max_depth, min_samples_leaf: hyper.min_samples_leaf, max_features };
    let sorted = SortedColumns::new(x);
    let trees = par::map_range(hyper.n_estimators, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        rng.set_stream(t as u64);
        let rows: Vec<usize> = if hyper.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
        fit_tree_sorted(x, &sorted, &rows, Targets::Class(y), params, Some(&mut rng))
    });
    Ok(ForestModel { version: MODEL_VERSION, n_features: f, hyper: hyper.clone(), trees })
}

fn check_width(expected: usize, x: &Matrix) -> Result<(), EnsembleError> {
    if x.cols() != expected {
        return Err(EnsembleError::ShapeMismatch { expected, got: x.cols() });
    }
    Ok(())
}

impl ForestModel {
    /// Mean of per-tree leaf class frequencies.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, EnsembleError> {
        check_width(self.n_features, x)?;
        let k = self.trees.len() as f64;
        Ok(par::map_range(x.rows(), |i| {
            let row = x.row(i);
            self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        }))
    }

    /// Share of trees whose leaf majority is the crash class.
    pub fn predict_votes(&self, x: &Matrix) -> Result<Vec<f64>, EnsembleError> {
        check_width(self.n_features, x)?;
        let k = self.trees.len() as f64;
        Ok(par::map_range(x.rows(), |i| {
            let row = x.row(i);
            self.trees.iter().filter(|t| t.predict_row(row) >= 0.5).count() as f64 / k
        }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnsembleError> {
        let m: Self = serde_json::from_str(s).map_err(|e| EnsembleError::Checkpoint(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(EnsembleError::Checkpoint(format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostHyper {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for BoostHyper {
    fn default() -> Self {
        Self { n_estimators: 100, learning_rate: 0.1, max_depth: 3, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub version: u32,
    pub n_features: usize,
    pub hyper: BoostHyper,
    /// Log-odds of the training base rate.
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
    /// Training log-loss after each round.
    pub train_loss: Vec<f64>,
}

fn log_loss(y: &[u8], raw: &[f64]) -> f64 {
    let s: f64 = y
        .iter()
        .zip(raw)
        .map(|(&l, &z)| {
            let p = sigmoid(z).clamp(1e-15, 1.0 - 1e-15);
            if l == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    s / y.len() as f64
}

/// Stagewise additive logistic model with Newton leaf weights.
pub fn fit_boost(x: &Matrix, y: &[u8], hyper: &BoostHyper) -> Result<BoostModel, EnsembleError> {
    check_xy(x, y)?;
    if !(hyper.learning_rate > 0.0) {
        return Err(EnsembleError::InvalidHyper("learning_rate must be > 0".into()));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(EnsembleError::SingleClassTraining);
    }
    let rate = pos as f64 / y.len() as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut raw = vec![base_score; y.len()];
    let rows: Vec<usize> = (0..y.len()).collect();
    let params = TreeParams { max_depth: hyper.max_depth, min_samples_leaf: 1, max_features: None };
    let sorted = SortedColumns::new(x);
    let mut trees = Vec::with_capacity(hyper.n_estimators);
    let mut train_loss = Vec::with_capacity(hyper.n_estimators);
    let mut g = vec![0.0; y.len()];
    let mut h = vec![0.0; y.len()];
    for _ in 0..hyper.n_estimators {
        for i in 0..y.len() {
            let p = sigmoid(raw[i]);
            g[i] = p - f64::from(y[i]);
            h[i] = p * (1.0 - p);
        }
        let targets = Targets::Newton {
            g: &g,
            h: &h,
            lambda: hyper.lambda,
            gamma: hyper.gamma,
            min_child_weight: hyper.min_child_weight,
        };
        let tree = fit_tree_sorted::<ChaCha8Rng>(x, &sorted, &rows, targets, params, None);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += hyper.learning_rate * tree.predict_row(x.row(i));
        }
        train_loss.push(log_loss(y, &raw));
        trees.push(tree);
    }
    Ok(BoostModel { version: MODEL_VERSION, n_features: x.cols(), hyper: hyper.clone(), base_score, trees, train_loss })
}

impl BoostModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        self.base_score + self.hyper.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, EnsembleError> {
        check_width(self.n_features, x)?;
        Ok(par::map_range(x.rows(), |i| sigmoid(self.raw_score(x.row(i)))))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("boost model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EnsembleError> {
        let m: Self = serde_json::from_str(s).map_err(|e| EnsembleError::Checkpoint(e.to_string()))?;
        if m.version != MODEL_VERSION {
            return Err(EnsembleError::Checkpoint(format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }
}
