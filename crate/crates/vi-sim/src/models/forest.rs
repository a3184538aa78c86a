//! Bagged CART regression forest.
//!
//! Each tree is grown on a bootstrap resample with variance-reduction splits
//! over a random feature subset per node. The forest records which rows each
//! tree drew, so predictions can be restricted to out-of-bag trees.

use rand::Rng;

use super::{ModelError, Predict};
use crate::numerics::Matrix;
use crate::rng::RngStream;

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    /// Minimum in-bag rows per leaf.
    pub min_leaf: usize,
    /// Maximum tree depth; `None` means unbounded.
    pub max_depth: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, mtry: None, min_leaf: 5, max_depth: None }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

/// Predictions restricted to out-of-bag trees. `values[i]` is meaningful
/// only where `valid[i]` holds, i.e. where at least one tree left row `i`
/// out of its bootstrap sample.
#[derive(Debug, Clone)]
pub struct OobPredictions {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// A fitted forest together with its bootstrap bookkeeping.
#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<Tree>,
    /// Per tree: how many times each training row was drawn into the bag.
    in_bag: Vec<Vec<u32>>,
    n_train: usize,
    p: usize,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_train_rows(&self) -> usize {
        self.n_train
    }

    /// How many times each training row entered tree `t`'s bootstrap sample.
    pub fn in_bag_counts(&self, t: usize) -> &[u32] {
        &self.in_bag[t]
    }

    /// Predicts `x` using, for each row, only the trees that did not train
    /// on that row. `x` must be row-aligned with the training data.
    pub fn oob_predict(&self, x: &Matrix) -> Result<OobPredictions, ModelError> {
        if x.cols() != self.p {
            return Err(ModelError::DimensionMismatch { expected: self.p, got: x.cols() });
        }
        if x.rows() != self.n_train {
            return Err(ModelError::DimensionMismatch { expected: self.n_train, got: x.rows() });
        }
        let mut values = vec![0.0; self.n_train];
        let mut valid = vec![false; self.n_train];
        for i in 0..self.n_train {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (t, tree) in self.trees.iter().enumerate() {
                if self.in_bag[t][i] == 0 {
                    sum += tree.predict_row(x.row(i));
                    count += 1;
                }
            }
            if count > 0 {
                values[i] = sum / count as f64;
                valid[i] = true;
            }
        }
        Ok(OobPredictions { values, valid })
    }
}

impl Predict for ForestModel {
    fn n_features(&self) -> usize {
        self.p
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }
}

/// Fits a bagged forest. Each tree draws its bootstrap sample and split
/// candidates from its own substream of `stream`, so the result is
/// deterministic for a given stream regardless of scheduling.
pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    config: &ForestConfig,
    stream: &RngStream,
) -> Result<ForestModel, ModelError> {
    let n = x.rows();
    let p = x.cols();
    assert_eq!(y.len(), n, "target length must match row count");
    assert!(config.n_trees > 0, "forest needs at least one tree");
    assert!(config.min_leaf > 0, "min_leaf must be positive");
    if n < config.min_leaf {
        return Err(ModelError::TooFewRows { needed: config.min_leaf, got: n });
    }
    let mtry = config.mtry.unwrap_or_else(|| (p / 3).max(1)).min(p);

    let mut trees = Vec::with_capacity(config.n_trees);
    let mut in_bag = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = stream.substream(t as u64).rng();
        let mut counts = vec![0u32; n];
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random_range(0..n);
            counts[r] += 1;
            rows.push(r);
        }
        let mut grower = TreeGrower {
            x,
            y,
            mtry,
            min_leaf: config.min_leaf,
            max_depth: config.max_depth,
            rng: &mut rng,
            nodes: Vec::new(),
        };
        grower.grow(rows, 0);
        trees.push(Tree { nodes: grower.nodes });
        in_bag.push(counts);
    }
    Ok(ForestModel { trees, in_bag, n_train: n, p })
}

struct TreeGrower<'a, R: Rng> {
    x: &'a Matrix,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> TreeGrower<'_, R> {
    /// Grows the subtree for `rows` (bootstrap indices, duplicates kept) and
    /// returns its node index.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let at = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { value: 0.0 });

        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let m = rows.len() as f64;
        let node_mean = sum / m;

        let depth_ok = self.max_depth.map_or(true, |d| depth < d);
        let split = if depth_ok && rows.len() >= 2 * self.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };

        match split {
            None => {
                self.nodes[at as usize] = Node::Leaf { value: node_mean };
            }
            Some(best) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&r| self.x.get(r, best.feature) <= best.threshold);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[at as usize] =
                    Node::Split { feature: best.feature, threshold: best.threshold, left, right };
            }
        }
        at
    }

    /// Best variance-reduction split over a random feature subset. Ties are
    /// broken toward the lowest feature index, then the lowest threshold, by
    /// scanning candidates in ascending order and requiring strict
    /// improvement.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let p = self.x.cols();
        let mut pool: Vec<usize> = (0..p).collect();
        for k in 0..self.mtry {
            let j = self.rng.random_range(k..p);
            pool.swap(k, j);
        }
        let mut candidates = pool[..self.mtry].to_vec();
        candidates.sort_unstable();

        let m = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let sumsq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let parent_sse = (sumsq - sum * sum / m).max(0.0);
        if parent_sse <= 0.0 {
            return None;
        }

        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &f in &candidates {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x.get(r, f), self.y[r])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_sum = 0.0;
            let mut left_sumsq = 0.0;
            for k in 1..pairs.len() {
                let (v_prev, y_prev) = pairs[k - 1];
                left_sum += y_prev;
                left_sumsq += y_prev * y_prev;
                let v = pairs[k].0;
                if v_prev == v {
                    continue;
                }
                let nl = k as f64;
                let nr = m - nl;
                if k < self.min_leaf || pairs.len() - k < self.min_leaf {
                    continue;
                }
                let right_sum = sum - left_sum;
                let right_sumsq = sumsq - left_sumsq;
                let sse = (left_sumsq - left_sum * left_sum / nl).max(0.0)
                    + (right_sumsq - right_sum * right_sum / nr).max(0.0);
                let gain = parent_sse - sse;
                if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(BestSplit { feature: f, threshold: 0.5 * (v_prev + v), gain });
                }
            }
        }
        best
    }
}
