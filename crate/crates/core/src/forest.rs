//! Random-forest regression used to center the response.
//!
//! Trees are grown CART-style on bootstrap resamples: every node tries `mtry`
//! randomly drawn features and takes the variance-reducing split with the
//! largest gain, thresholds at midpoints between consecutive distinct values.
//! Each tree draws from its own substream keyed by `(seed, tree index)`, so a
//! forest is identical however the trees are scheduled.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{column, Dataset};
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_FOREST};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means ⌈p/3⌉.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 500, mtry: None, min_leaf: 5, max_depth: None, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| p.div_ceil(3)).max(1)
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        let m = self.resolved_mtry(p);
        if m > p || self.mtry == Some(0) {
            return Err(Error::InvalidConfig(format!("mtry must be in 1..={p}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: f64, count: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[(i, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { value, count } => Some((value, count)),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub training_bounds: (f64, f64),
    pub n_features: usize,
    /// Out-of-bag prediction per training row; `None` for rows that were in
    /// every bootstrap sample or when bootstrapping is off.
    pub oob_predictions: Vec<Option<f64>>,
}

/// Anything that predicts the conditional mean of the response.
pub trait MeanModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
    // scratch
    pairs: Vec<(f64, f64)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let first = self.y[rows[0]];
        let value = if rows.iter().all(|&r| self.y[r] == first) {
            first
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64
        };
        self.nodes.push(Node::Leaf { value, count: rows.len() });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x.ncols();
        let mut features = index::sample(rng, p, self.mtry).into_vec();
        features.sort_unstable();

        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        for f in features {
            let col = column(self.x, f);
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| (col[r], self.y[r])));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.pairs[k - 1].1;
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.pairs[k - 1].0, self.pairs[k].0);
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / k as f64
                    + right_sum * right_sum / (n - k) as f64
                    - parent;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }

    fn grow(&mut self, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&r| self.y[r] == first);
        if pure || rows.len() < 2 * self.min_leaf || self.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(rows);
        }
        let Some(split) = self.best_split(rows, rng) else {
            return self.leaf(rows);
        };
        let col = column(self.x, split.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| col[r] <= split.threshold);
        debug_assert!(left_rows.len() >= self.min_leaf && right_rows.len() >= self.min_leaf);

        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: f64::NAN, count: 0 });
        let left = self.grow(&left_rows, depth + 1, rng);
        let right = self.grow(&right_rows, depth + 1, rng);
        self.nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        at
    }
}

fn grow_tree(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig, t: usize) -> (Tree, Vec<bool>) {
    let n = x.nrows();
    let mut rng = substream(cfg.seed, &[STREAM_FOREST, t as u64]);
    let mut in_bag = vec![!cfg.bootstrap; n];
    let rows: Vec<usize> = if cfg.bootstrap {
        (0..n)
            .map(|_| {
                let r = rng.random_range(0..n);
                in_bag[r] = true;
                r
            })
            .collect()
    } else {
        (0..n).collect()
    };
    let mut g = Grower {
        x,
        y,
        mtry: cfg.resolved_mtry(x.ncols()),
        min_leaf: cfg.min_leaf,
        max_depth: cfg.max_depth,
        nodes: Vec::new(),
        pairs: Vec::with_capacity(n),
    };
    g.grow(&rows, 0, &mut rng);
    (Tree { nodes: g.nodes }, in_bag)
}

pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch(n, y.len()));
    }
    cfg.validate(p)?;
    let needed = (2 * cfg.min_leaf).max(2);
    if n < needed {
        return Err(Error::TooFewRows { needed, got: n });
    }
    let grown: Vec<(Tree, Vec<bool>)> =
        (0..cfg.n_trees).into_par_iter().map(|t| grow_tree(x, y, cfg, t)).collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_sum[i] += tree.predict_row(x, i);
            oob_count[i] += 1;
        }
    }
    let oob_predictions = oob_sum
        .iter()
        .zip(&oob_count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        training_bounds: (lo, hi),
        n_features: p,
        oob_predictions,
    })
}

impl ForestModel {
    /// Out-of-bag mean squared error over rows that have an OOB prediction.
    pub fn oob_mse(&self, y: &[f64]) -> Option<f64> {
        let (s, c) = self
            .oob_predictions
            .iter()
            .zip(y)
            .filter_map(|(p, &yi)| p.map(|p| (p - yi).powi(2)))
            .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
        (c > 0).then(|| s / c as f64)
    }

    /// 1 − OOB MSE / Var(y), the usual out-of-bag R².
    pub fn oob_r2(&self, y: &[f64]) -> Option<f64> {
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        self.oob_mse(y).map(|mse| 1.0 - mse / var)
    }
}

impl MeanModel for ForestModel {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "forest trained on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let (lo, hi) = self.training_bounds;
        let k = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|i| {
                let s: f64 = self.trees.iter().map(|t| t.predict_row(x, i)).sum();
                (s / k).clamp(lo, hi)
            })
            .collect())
    }
}

pub fn predict(model: &ForestModel, x_rows: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict(x_rows)
}

/// `y_i − m̂(x_i)` for every row.
pub fn residuals<M: MeanModel + ?Sized>(model: &M, ds: &Dataset) -> Result<Vec<f64>> {
    let fitted = model.predict(&ds.x)?;
    Ok(ds.y.iter().zip(fitted).map(|(y, f)| y - f).collect())
}
