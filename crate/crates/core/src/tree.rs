//! CART regression trees with squared-error splitting.
//!
//! A tree is grown on a multiset of row indices (a subsample or a bootstrap
//! resample). At each node `mtry` features are drawn without replacement and
//! the split minimising the children's summed squared error is taken among the
//! midpoints between consecutive distinct feature values. Ties go to the lowest
//! feature index, then the smallest threshold.
//!
//! Each node draws its randomness from a stream keyed by its path from the
//! root, so truncating a tree at some depth leaves the shallower splits intact.

use rand::rngs::SmallRng;
use rand::seq::index;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Candidate features per split; `None` means `ceil(d / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Random candidate thresholds per feature; 0 scans every midpoint.
    pub split_tries: usize,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            split_tries: 0,
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| d.div_ceil(3).max(1))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let mtry = self.resolved_mtry(d);
        if mtry == 0 || mtry > d {
            return Err(Error::config(format!("mtry must be in 1..={d}, got {mtry}")));
        }
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::config("max_depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// A tree node. Internal nodes keep the mean and size of the samples routed
/// through them so that depth-truncated predictions can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub value: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    nodes: Vec<Node>,
    /// Size of the (multi)set the tree was grown on.
    k: usize,
    d: usize,
}

impl TreeModel {
    /// A single-leaf tree predicting `value` everywhere.
    pub fn constant(value: f64, k: usize, d: usize) -> Self {
        TreeModel {
            nodes: vec![Node {
                value,
                samples: k,
                split: None,
            }],
            k,
            d,
        }
    }

    /// Rebuilds a tree from its node table, checking that it is a proper
    /// binary tree rooted at node 0.
    pub fn from_nodes(nodes: Vec<Node>, k: usize, d: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidData("tree without nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return Err(Error::InvalidData(format!("node {i} reached twice")));
            }
            seen[i] = true;
            if let Some(s) = &nodes[i].split {
                if s.feature >= d || s.left >= nodes.len() || s.right >= nodes.len() {
                    return Err(Error::InvalidData(format!("node {i} has a bad split")));
                }
                stack.push(s.left);
                stack.push(s.right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidData("unreachable tree nodes".into()));
        }
        Ok(TreeModel { nodes, k, d })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            max = max.max(depth);
            if let Some(s) = &self.nodes[i].split {
                stack.push((s.left, depth + 1));
                stack.push((s.right, depth + 1));
            }
        }
        max
    }

    /// Index of the leaf containing `x`. Goes left iff `x[feature] <= threshold`.
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        i
    }

    /// Unchecked prediction; `x` must have `d` components.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        self.nodes[self.leaf_index(x)].value
    }

    /// Prediction of the tree truncated at `depth` (root is depth 0).
    pub fn predict_truncated(&self, x: &[f64], depth: usize) -> f64 {
        let mut i = 0;
        let mut level = 0;
        while let Some(s) = &self.nodes[i].split {
            if level == depth {
                break;
            }
            i = if x[s.feature] <= s.threshold { s.left } else { s.right };
            level += 1;
        }
        self.nodes[i].value
    }
}

/// Checked single-point prediction.
pub fn predict_tree(model: &TreeModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: x.len(),
        });
    }
    Ok(model.predict(x))
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    key: u64,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Grows a tree on the rows listed in `sample` (repeats allowed).
pub fn fit_tree(data: &Dataset, sample: &[usize], config: &TreeConfig) -> Result<TreeModel> {
    if sample.is_empty() {
        return Err(Error::config("cannot fit a tree on an empty subsample"));
    }
    config.validate(data.d())?;
    if let Some(&bad) = sample.iter().find(|&&i| i >= data.n()) {
        return Err(Error::InvalidData(format!("sample index {bad} out of range")));
    }
    Ok(grow(data, sample, config))
}

pub(crate) fn grow(data: &Dataset, sample: &[usize], config: &TreeConfig) -> TreeModel {
    let d = data.d();
    let y = data.response();
    let mtry = config.resolved_mtry(d);
    let mut rows: Vec<usize> = sample.to_vec();
    let mut nodes = vec![Node {
        value: 0.0,
        samples: rows.len(),
        split: None,
    }];
    let mut stack = vec![Pending {
        node: 0,
        start: 0,
        end: rows.len(),
        depth: 0,
        key: rng::derive(config.seed, 0x7EE),
    }];
    let mut scratch: Vec<(f64, f64)> = Vec::with_capacity(rows.len());

    while let Some(p) = stack.pop() {
        let members = &rows[p.start..p.end];
        let count = members.len();
        let mean = members.iter().map(|&i| y[i]).sum::<f64>() / count as f64;
        nodes[p.node].value = mean;
        nodes[p.node].samples = count;

        let first = y[members[0]];
        let constant = members.iter().all(|&i| y[i] == first);
        let depth_capped = config.max_depth.is_some_and(|m| p.depth >= m);
        if constant || depth_capped || count < 2 * config.min_leaf {
            if constant {
                nodes[p.node].value = first;
            }
            continue;
        }

        let mut node_rng = SmallRng::seed_from_u64(p.key);
        let mut features = index::sample(&mut node_rng, d, mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Candidate> = None;
        for &j in &features {
            scratch.clear();
            scratch.extend(members.iter().map(|&i| (data.value(i, j), y[i] - mean)));
            scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(c) = best_split_on_feature(&scratch, j, config, &mut node_rng) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else { continue };

        // Stable partition of this node's rows around the threshold.
        let slice = &mut rows[p.start..p.end];
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = slice
            .iter()
            .partition(|&&i| data.value(i, best.feature) <= best.threshold);
        let mid = p.start + left.len();
        left.append(&mut right);
        slice.copy_from_slice(&left);

        let left_id = nodes.len();
        let right_id = left_id + 1;
        for _ in 0..2 {
            nodes.push(Node {
                value: 0.0,
                samples: 0,
                split: None,
            });
        }
        nodes[p.node].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left: left_id,
            right: right_id,
        });
        stack.push(Pending {
            node: right_id,
            start: mid,
            end: p.end,
            depth: p.depth + 1,
            key: rng::derive(p.key, 1),
        });
        stack.push(Pending {
            node: left_id,
            start: p.start,
            end: mid,
            depth: p.depth + 1,
            key: rng::derive(p.key, 0),
        });
    }

    TreeModel {
        nodes,
        k: sample.len(),
        d,
    }
}

/// Scans `sorted` (feature value, centred response) pairs and returns the best
/// admissible split. The score is `S_L^2/n_L + S_R^2/n_R`; maximising it
/// minimises the children's summed squared error.
fn best_split_on_feature(
    sorted: &[(f64, f64)],
    feature: usize,
    config: &TreeConfig,
    rng: &mut SmallRng,
) -> Option<Candidate> {
    let m = sorted.len();
    let min_leaf = config.min_leaf;
    let total: f64 = sorted.iter().map(|p| p.1).sum();

    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for p in sorted {
        acc += p.1;
        prefix.push(acc);
    }

    let admissible = (min_leaf..=m - min_leaf).filter(|&p| sorted[p - 1].0 < sorted[p].0);
    let positions: Vec<usize> = if config.split_tries == 0 {
        admissible.collect()
    } else {
        let all: Vec<usize> = admissible.collect();
        if all.len() <= config.split_tries {
            all
        } else {
            let mut picked: Vec<usize> = index::sample(rng, all.len(), config.split_tries)
                .into_iter()
                .map(|t| all[t])
                .collect();
            picked.sort_unstable();
            picked
        }
    };

    let mut best: Option<Candidate> = None;
    for p in positions {
        let left_sum = prefix[p];
        let right_sum = total - left_sum;
        let score = left_sum * left_sum / p as f64 + right_sum * right_sum / (m - p) as f64;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Candidate {
                feature,
                threshold: midpoint(sorted[p - 1].0, sorted[p].0),
                score,
            });
        }
    }
    best
}

/// Midpoint `t` of `a < b` with `a <= t < b` even when the two are adjacent floats.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t >= b || t < a {
        a
    } else {
        t
    }
}
