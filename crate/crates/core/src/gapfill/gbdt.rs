//! Gradient-boosted regression trees with sparsity-aware splits.
//!
//! Missing feature values are `NaN`. Every split is found by exact greedy
//! search over the present values of each feature: candidate thresholds are
//! midpoints between consecutive distinct values, and the rows whose
//! feature is missing are sent to whichever side yields the larger
//! squared-error gain. That side is stored as the node's default direction
//! and reused at prediction time.
//!
//! Ties in gain are broken by lowest feature index, then lowest threshold,
//! then default-left, which falls out of the enumeration order: a later
//! candidate replaces the best only if its gain is larger by more than
//! [`TIE_TOLERANCE`] (relative). Gains of the same partition reached through
//! different features are summed in different orders and may differ in the
//! last bits, so an exact comparison would not honour this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative gain difference below which two candidate splits tie.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Dense row-major matrix; `NaN` marks a missing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::shape(format!(
                "{n_rows}x{n_cols} matrix needs {} entries, got {}",
                n_rows * n_cols,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("matrix entries must be finite or NaN"));
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|v| v.unwrap_or(f64::NAN)))
            .collect();
        Self::new(rows.len(), n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let v = self.data[r * self.n_cols + c];
        (!v.is_nan()).then_some(v)
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols)
            .map(|c| {
                (0..self.n_rows)
                    .map(|r| self.data[r * self.n_cols + c])
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub n_trees: usize,
    /// Maximum number of split levels; the root sits at depth 0.
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub min_gain: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            min_gain: 0.0,
        }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning_rate must be in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if !self.min_gain.is_finite() {
            return Err(Error::invalid("min_gain must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
    },
}

/// A regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = x[feature];
                    let go_left = if v.is_nan() {
                        default_left
                    } else {
                        v < threshold
                    };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    /// Number of split levels on the deepest path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    pub params: GbdtParams,
}

impl GbdtModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict_gbdt(self, x)
    }
}

/// Fit a boosted ensemble on squared error. `base_score` is the target mean;
/// each tree fits the current residuals and is added with `learning_rate`.
pub fn fit_gbdt(x: &Matrix, y: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    if x.n_rows == 0 {
        return Err(Error::EmptySelection("fit_gbdt needs at least one row"));
    }
    if x.n_rows != y.len() {
        return Err(Error::shape(format!(
            "{} feature rows but {} targets",
            x.n_rows,
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }

    let base_score = y.iter().sum::<f64>() / y.len() as f64;
    let columns = x.columns();
    let presorted = presort(&columns);
    let mut residual: Vec<f64> = y.iter().map(|v| v - base_score).collect();
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        let (tree, fitted) = grow_tree(&columns, &presorted, &residual, params);
        for (r, f) in residual.iter_mut().zip(&fitted) {
            *r -= params.learning_rate * f;
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        base_score,
        learning_rate: params.learning_rate,
        n_features: x.n_cols,
        trees,
        params: params.clone(),
    })
}

/// Fit one tree to `target` with the given params (learning rate unused).
pub fn fit_tree(x: &Matrix, target: &[f64], params: &GbdtParams) -> Result<Tree> {
    params.validate()?;
    if x.n_rows == 0 || x.n_rows != target.len() {
        return Err(Error::shape(
            "fit_tree needs matching, non-empty rows and targets",
        ));
    }
    let columns = x.columns();
    let presorted = presort(&columns);
    Ok(grow_tree(&columns, &presorted, target, params).0)
}

pub fn predict_gbdt(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features {
        return Err(Error::shape(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.len()
        )));
    }
    let sum: f64 = model.trees.iter().map(|t| t.predict(x)).sum();
    Ok(model.base_score + model.learning_rate * sum)
}

/// Sum of squared errors of the ensemble on a dataset.
pub fn training_loss(model: &GbdtModel, x: &Matrix, y: &[f64]) -> Result<f64> {
    (0..x.n_rows)
        .map(|r| predict_gbdt(model, x.row(r)).map(|p| (p - y[r]).powi(2)))
        .sum()
}

/// Present row indices of each column, sorted by value then row.
fn presort(columns: &[Vec<f64>]) -> Vec<Vec<u32>> {
    columns
        .iter()
        .map(|col| {
            let mut rows: Vec<u32> = (0..col.len() as u32)
                .filter(|&r| !col[r as usize].is_nan())
                .collect();
            rows.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            rows
        })
        .collect()
}

/// Midpoint strictly inside `(lo, hi]` for `lo < hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (lo + hi);
    if m > lo {
        m
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    target: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<TreeNode>,
    fitted: Vec<f64>,
    goes_left: Vec<bool>,
}

fn grow_tree(
    columns: &[Vec<f64>],
    presorted: &[Vec<u32>],
    target: &[f64],
    params: &GbdtParams,
) -> (Tree, Vec<f64>) {
    let n = target.len();
    let mut grower = Grower {
        columns,
        target,
        params,
        nodes: Vec::new(),
        fitted: vec![0.0; n],
        goes_left: vec![false; n],
    };
    let rows: Vec<u32> = (0..n as u32).collect();
    grower.build(rows, presorted.to_vec(), 0);
    (
        Tree {
            nodes: grower.nodes,
        },
        grower.fitted,
    )
}

impl Grower<'_> {
    fn build(&mut self, rows: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.target[r as usize]).sum();
        self.nodes.push(TreeNode::Leaf {
            value: sum / n as f64,
        });

        let can_split = depth < self.params.max_depth && n >= 2 * self.params.min_samples_leaf;
        let best = if can_split {
            self.best_split(n, sum, &sorted)
        } else {
            None
        };
        let Some(best) = best.filter(|b| b.gain > self.params.min_gain) else {
            let value = sum / n as f64;
            for &r in &rows {
                self.fitted[r as usize] = value;
            }
            return id;
        };

        let col = &self.columns[best.feature];
        for &r in &rows {
            let v = col[r as usize];
            self.goes_left[r as usize] = if v.is_nan() {
                best.default_left
            } else {
                v < best.threshold
            };
        }
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| self.goes_left[r as usize]);
        let mut left_sorted = Vec::with_capacity(sorted.len());
        let mut right_sorted = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.into_iter().partition(|&r| self.goes_left[r as usize]);
            left_sorted.push(l);
            right_sorted.push(r);
        }
        drop(rows);

        let left = self.build(left_rows, left_sorted, depth + 1);
        let right = self.build(right_rows, right_sorted, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            default_left: best.default_left,
            left,
            right,
        };
        id
    }

    fn best_split(&self, n: usize, sum: f64, sorted: &[Vec<u32>]) -> Option<BestSplit> {
        let min_leaf = self.params.min_samples_leaf;
        let parent_score = sum * sum / n as f64;
        let mut best: Option<BestSplit> = None;

        for (feature, list) in sorted.iter().enumerate() {
            if list.len() < 2 {
                continue;
            }
            let col = &self.columns[feature];
            let present_sum: f64 = list.iter().map(|&r| self.target[r as usize]).sum();
            let n_missing = n - list.len();
            let missing_sum = sum - present_sum;

            let mut prefix = 0.0;
            for i in 0..list.len() - 1 {
                let r = list[i] as usize;
                prefix += self.target[r];
                let (lo, hi) = (col[r], col[list[i + 1] as usize]);
                if lo == hi {
                    continue;
                }
                let threshold = midpoint(lo, hi);
                let n_present_left = i + 1;
                for default_left in [true, false] {
                    let (n_left, sum_left) = if default_left {
                        (n_present_left + n_missing, prefix + missing_sum)
                    } else {
                        (n_present_left, prefix)
                    };
                    let n_right = n - n_left;
                    if n_left < min_leaf || n_right < min_leaf {
                        continue;
                    }
                    let sum_right = sum - sum_left;
                    let gain = sum_left * sum_left / n_left as f64
                        + sum_right * sum_right / n_right as f64
                        - parent_score;
                    if best.is_none_or(|b| gain > b.gain + TIE_TOLERANCE * b.gain.abs()) {
                        best = Some(BestSplit {
                            gain,
                            feature,
                            threshold,
                            default_left,
                        });
                    }
                }
            }
        }
        best
    }
}
