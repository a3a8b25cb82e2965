//! Exact-greedy regression trees over gradient/hessian statistics.

use super::objective::GradHess;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Samples with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// Nodes in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { weight }] }
    }

    /// Validates child links and feature bounds.
    pub fn from_nodes(nodes: Vec<TreeNode>, feature_count: usize) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if let TreeNode::Split { feature, left, right, threshold } = *node {
                if feature >= feature_count {
                    return Err(format!("node {i}: feature {feature} >= {feature_count}"));
                }
                if threshold.is_nan() {
                    return Err(format!("node {i}: NaN threshold"));
                }
                for child in [left, right] {
                    if child <= i || child >= nodes.len() || referenced[child] {
                        return Err(format!("node {i}: bad child {child}"));
                    }
                    referenced[child] = true;
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err("unreachable node".into());
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if features[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { weight } => Some(*weight),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Growth limits and regularization for one tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_child_hessian: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// `-G / (H + lambda)`, or 0 when the denominator vanishes.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> f64 {
    let denom = hess_sum + lambda;
    if denom > 0.0 {
        -grad_sum / denom
    } else {
        0.0
    }
}

fn score(grad_sum: f64, hess_sum: f64, lambda: f64) -> f64 {
    let denom = hess_sum + lambda;
    if denom > 0.0 {
        grad_sum * grad_sum / denom
    } else {
        0.0
    }
}

/// Regularized gain of splitting a node with sums (G, H) into (G_L, H_L) and the rest.
pub fn split_gain(left: (f64, f64), total: (f64, f64), lambda: f64, gamma: f64) -> f64 {
    let right = (total.0 - left.0, total.1 - left.1);
    0.5 * (score(left.0, left.1, lambda) + score(right.0, right.1, lambda)
        - score(total.0, total.1, lambda))
        - gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Column-major copy of the training features.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl FeatureMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for row in rows {
            for (col, &x) in columns.iter_mut().zip(row.as_ref()) {
                col.push(x);
            }
        }
        FeatureMatrix { columns, rows: rows.len() }
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

/// Midpoint between two distinct sorted values, nudged so `lo < t <= hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Best split over all features for the given rows, or None when no split
/// satisfies the child-hessian constraint with positive gain.
pub fn best_split(
    grads: &[GradHess],
    x: &FeatureMatrix,
    rows: &[usize],
    params: &TreeParams,
) -> Option<SplitCandidate> {
    let total = rows.iter().fold((0.0, 0.0), |acc, &i| (acc.0 + grads[i].g, acc.1 + grads[i].h));
    let mut best: Option<SplitCandidate> = None;
    let mut order = rows.to_vec();
    for feature in 0..x.feature_count() {
        let column = &x.columns[feature];
        order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
        let mut left = (0.0, 0.0);
        for pair in order.windows(2) {
            let (i, next) = (pair[0], pair[1]);
            left.0 += grads[i].g;
            left.1 += grads[i].h;
            if column[i] == column[next] {
                continue;
            }
            let right_hess = total.1 - left.1;
            if left.1 < params.min_child_hessian || right_hess < params.min_child_hessian {
                continue;
            }
            let gain = split_gain(left, total, params.lambda, params.gamma);
            if gain > best.map_or(0.0, |b| b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(column[i], column[next]),
                    gain,
                });
            }
        }
    }
    best
}

/// Grows one tree greedily from the root over `rows`.
pub fn grow_tree(grads: &[GradHess], x: &FeatureMatrix, rows: &[usize], params: &TreeParams) -> Tree {
    let mut nodes = Vec::new();
    grow(grads, x, rows.to_vec(), params, 0, &mut nodes);
    Tree { nodes }
}

fn grow(
    grads: &[GradHess],
    x: &FeatureMatrix,
    rows: Vec<usize>,
    params: &TreeParams,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    let split = if depth < params.max_depth && rows.len() > 1 {
        best_split(grads, x, &rows, params)
    } else {
        None
    };
    match split {
        None => {
            let (g, h) = rows.iter().fold((0.0, 0.0), |acc, &i| (acc.0 + grads[i].g, acc.1 + grads[i].h));
            nodes.push(TreeNode::Leaf { weight: leaf_weight(g, h, params.lambda) });
        }
        Some(SplitCandidate { feature, threshold, .. }) => {
            nodes.push(TreeNode::Split { feature, threshold, left: 0, right: 0 });
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&i| x.value(i, feature) < threshold);
            let left = grow(grads, x, left_rows, params, depth + 1, nodes);
            let right = grow(grads, x, right_rows, params, depth + 1, nodes);
            nodes[id] = TreeNode::Split { feature, threshold, left, right };
        }
    }
    id
}
