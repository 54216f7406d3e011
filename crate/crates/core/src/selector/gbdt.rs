//! Gradient-boosted regression trees under logistic loss.
//!
//! Each round fits a depth-limited regression tree to the residuals
//! `y - p` by variance reduction, then sets leaf values with a single Newton
//! step `sum(r) / sum(p (1 - p))`. The shrunken update is halved until the
//! mean training loss does not increase, so the per-round loss trace is
//! non-increasing.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SelectorError;

const HESSIAN_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Row fraction drawn (without replacement, seeded) for each tree's structure.
    #[serde(default = "one")]
    pub subsample: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 2, subsample: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize, gain: f64 },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_features: usize,
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub learning_rate: f64,
    pub params: GbdtParams,
    pub trees: Vec<RegressionTree>,
}

/// Per-round training trace returned alongside a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Mean logistic loss of the prior, then after each round.
    pub losses: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss of raw scores against 0/1 labels.
pub fn logistic_loss(scores: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| if y { softplus(-f) } else { softplus(f) })
        .sum();
    total / scores.len() as f64
}

impl GbdtModel {
    /// Raw additive score (log-odds).
    pub fn score(&self, x: &[f64]) -> Result<f64, SelectorError> {
        if x.len() != self.n_features {
            return Err(SelectorError::FeatureLength { expected: self.n_features, got: x.len() });
        }
        Ok(self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    /// Pre-threshold confidence in `(0, 1)`.
    pub fn confidence(&self, x: &[f64]) -> Result<f64, SelectorError> {
        self.score(x).map(sigmoid)
    }

    /// Binary decision: confidence strictly above `threshold`.
    pub fn decide(&self, x: &[f64], threshold: f64) -> Result<bool, SelectorError> {
        Ok(self.confidence(x)? > threshold)
    }

    /// Total split gain per feature across all trees.
    pub fn feature_gains(&self) -> Vec<f64> {
        let mut gains = vec![0.0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    gains[*feature] += gain;
                }
            }
        }
        gains
    }

    pub fn validate(&self) -> Result<(), SelectorError> {
        for (ti, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return Err(SelectorError::InvalidModel(format!("tree {ti} has no nodes")));
            }
            for n in &t.nodes {
                match *n {
                    Node::Split { feature, threshold, left, right, .. } => {
                        if feature >= self.n_features {
                            return Err(SelectorError::InvalidModel(format!("tree {ti} splits on feature {feature}")));
                        }
                        if !threshold.is_finite() || left >= t.nodes.len() || right >= t.nodes.len() {
                            return Err(SelectorError::InvalidModel(format!("tree {ti} has a malformed split")));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(SelectorError::InvalidModel(format!("tree {ti} has a non-finite leaf")));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(SelectorError::InvalidModel("non-finite base score or learning rate".into()));
        }
        Ok(())
    }
}

/// Best variance-reduction split of `rows` on one feature: `(gain, threshold)`.
fn best_split_on(
    x: &[Vec<f64>],
    residual: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
    let n = order.len();
    let total: f64 = order.iter().map(|&i| residual[i]).sum();
    let parent = total * total / n as f64;
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        left_sum += residual[order[k]];
        let (lo, hi) = (x[order[k]][feature], x[order[k + 1]][feature]);
        let n_left = k + 1;
        let n_right = n - n_left;
        if lo == hi || n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, lo + (hi - lo) / 2.0));
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    hessian: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let r: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hessian[i]).sum();
        r / h.max(HESSIAN_FLOOR)
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(rows) });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf.max(1) {
            return id;
        }
        let n_features = self.x[rows[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..n_features {
            if let Some((gain, thr)) = best_split_on(self.x, self.residual, rows, f, self.params.min_samples_leaf.max(1)) {
                if best.is_none_or(|(_, g, _)| gain > g) {
                    best = Some((f, gain, thr));
                }
            }
        }
        let Some((feature, gain, threshold)) = best.filter(|b| b.1 > MIN_GAIN) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right, gain };
        id
    }
}

/// Fits one regression tree to `residual` over `rows`.
pub(crate) fn fit_tree(x: &[Vec<f64>], residual: &[f64], hessian: &[f64], rows: &[usize], params: &GbdtParams) -> RegressionTree {
    let mut b = TreeBuilder { x, residual, hessian, params, nodes: Vec::new() };
    b.build(rows, 0);
    RegressionTree { nodes: b.nodes }
}

/// Fits a boosted classifier. Both classes must be present.
pub fn gbdt_fit(
    x: &[Vec<f64>],
    labels: &[bool],
    params: &GbdtParams,
    seed: u64,
) -> Result<(GbdtModel, FitTrace), SelectorError> {
    if x.len() != labels.len() {
        return Err(SelectorError::InvalidTrainingData(format!("{} rows but {} labels", x.len(), labels.len())));
    }
    if x.len() < 2 {
        return Err(SelectorError::InvalidTrainingData("need at least two examples".into()));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(SelectorError::InvalidTrainingData("ragged or empty feature rows".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SelectorError::InvalidTrainingData("non-finite feature value".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(SelectorError::SingleClass);
    }
    if !(params.learning_rate > 0.0) || params.max_depth == 0 || !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(SelectorError::InvalidTrainingData(format!("invalid hyperparameters {params:?}")));
    }

    let n = x.len();
    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let mut scores = vec![base_score; n];
    let mut loss = logistic_loss(&scores, labels);
    let mut trace = FitTrace { losses: vec![loss] };
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_rows: Vec<usize> = (0..n).collect();
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    for _ in 0..params.n_trees {
        let p: Vec<f64> = scores.iter().map(|&f| sigmoid(f)).collect();
        let residual: Vec<f64> = p.iter().zip(labels).map(|(&p, &y)| f64::from(u8::from(y)) - p).collect();
        let hessian: Vec<f64> = p.iter().map(|&p| p * (1.0 - p)).collect();
        let rows = if sample_size < n {
            let mut r = sample(&mut rng, n, sample_size).into_vec();
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let mut tree = fit_tree(x, &residual, &hessian, &rows, params);

        let step: Vec<f64> = x.iter().map(|row| tree.predict(row)).collect();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> =
                scores.iter().zip(&step).map(|(&f, &s)| f + params.learning_rate * scale * s).collect();
            let candidate_loss = logistic_loss(&candidate, labels);
            if candidate_loss <= loss {
                scores = candidate;
                loss = candidate_loss;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            scale = 0.0;
        }
        tree.scale_leaves(scale);
        trees.push(tree);
        trace.losses.push(loss);
    }

    let model = GbdtModel { n_features, base_score, learning_rate: params.learning_rate, params: params.clone(), trees };
    model.validate()?;
    Ok((model, trace))
}
