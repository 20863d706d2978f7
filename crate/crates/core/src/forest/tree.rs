//! CART classification trees on an encoded feature matrix.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Level-count ceiling for exhaustive categorical subset search.
pub const EXHAUSTIVE_LEVELS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SplitRule {
    /// Left when `value <= threshold`.
    Numeric { feature: usize, threshold: f64 },
    /// Left when the level index is in `left_levels` (sorted).
    Categorical {
        feature: usize,
        left_levels: Vec<u32>,
    },
}

impl SplitRule {
    pub fn feature(&self) -> usize {
        match self {
            SplitRule::Numeric { feature, .. } | SplitRule::Categorical { feature, .. } => *feature,
        }
    }

    /// `value` is a number or a level index; unknown levels are encoded as -1.
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        match self {
            SplitRule::Numeric { threshold, .. } => value <= *threshold,
            SplitRule::Categorical { left_levels, .. } => {
                value >= 0.0 && left_levels.binary_search(&(value as u32)).is_ok()
            }
        }
    }
}

/// Half-open interval `(lower, upper]`; `None` is unbounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower.is_none_or(|l| x > l) && self.upper.is_none_or(|u| x <= u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Class counts over the tree's training sample (with bootstrap multiplicity).
    pub class_counts: Vec<u32>,
    /// Distinct training-row ids that reached the leaf.
    pub rows: Vec<u32>,
}

impl Leaf {
    pub fn coverage(&self) -> u32 {
        self.class_counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum NodeKind {
    Internal {
        rule: SplitRule,
        left: u32,
        right: u32,
    },
    Leaf(Leaf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<u32>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Column-major encoded features: numbers as-is, categories as level index,
/// missing as NaN, unknown levels as -1.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub n_rows: usize,
    pub columns: Vec<Vec<f64>>,
    /// Level count per feature; 0 marks a numeric feature.
    pub n_levels: Vec<usize>,
}

impl Encoded {
    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

pub(crate) struct GrowParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub n_classes: usize,
}

impl Tree {
    pub fn leaf(&self, id: u32) -> Option<&Leaf> {
        match &self.nodes[id as usize].kind {
            NodeKind::Leaf(l) => Some(l),
            NodeKind::Internal { .. } => None,
        }
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, NodeKind::Leaf(_)))
            .map(|(i, _)| i as u32)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids().count()
    }

    /// Route one row; `Err(feature)` when a split meets a missing value.
    pub fn route(&self, value: impl Fn(usize) -> f64) -> Result<u32, usize> {
        let mut id = 0u32;
        loop {
            match &self.nodes[id as usize].kind {
                NodeKind::Leaf(_) => return Ok(id),
                NodeKind::Internal { rule, left, right } => {
                    let x = value(rule.feature());
                    if x.is_nan() {
                        return Err(rule.feature());
                    }
                    id = if rule.goes_left(x) { *left } else { *right };
                }
            }
        }
    }

    /// Node ids from the root to the leaf reached by the row.
    pub fn route_path(&self, value: impl Fn(usize) -> f64) -> Result<Vec<u32>, usize> {
        let mut path = vec![0u32];
        loop {
            let id = *path.last().expect("non-empty");
            match &self.nodes[id as usize].kind {
                NodeKind::Leaf(_) => return Ok(path),
                NodeKind::Internal { rule, left, right } => {
                    let x = value(rule.feature());
                    if x.is_nan() {
                        return Err(rule.feature());
                    }
                    path.push(if rule.goes_left(x) { *left } else { *right });
                }
            }
        }
    }

    /// Level indices of categorical `feature` admissible in the node's region.
    pub fn allowed_levels(&self, node: u32, feature: usize, n_levels: usize) -> Vec<bool> {
        let mut allowed = vec![true; n_levels];
        let mut child = node;
        while let Some(parent) = self.nodes[child as usize].parent {
            if let NodeKind::Internal {
                rule:
                    SplitRule::Categorical {
                        feature: f,
                        left_levels,
                    },
                left,
                ..
            } = &self.nodes[parent as usize].kind
            {
                if *f == feature {
                    let went_left = *left == child;
                    for (k, a) in allowed.iter_mut().enumerate() {
                        let in_left = left_levels.binary_search(&(k as u32)).is_ok();
                        if in_left != went_left {
                            *a = false;
                        }
                    }
                }
            }
            child = parent;
        }
        allowed
    }

    /// Per-feature numeric split bounds along the path to `node`; categorical
    /// entries stay unbounded.
    pub fn bounds(&self, node: u32, n_features: usize) -> Vec<Interval> {
        let mut bounds = vec![Interval::default(); n_features];
        let mut child = node;
        while let Some(parent) = self.nodes[child as usize].parent {
            if let NodeKind::Internal {
                rule: SplitRule::Numeric { feature, threshold },
                left,
                ..
            } = &self.nodes[parent as usize].kind
            {
                let b = &mut bounds[*feature];
                if *left == child {
                    b.upper = Some(b.upper.map_or(*threshold, |u| u.min(*threshold)));
                } else {
                    b.lower = Some(b.lower.map_or(*threshold, |l| l.max(*threshold)));
                }
            }
            child = parent;
        }
        bounds
    }

    /// Grow a tree on `sample` (row ids with bootstrap multiplicity).
    pub(crate) fn grow<R: Rng>(
        data: &Encoded,
        labels: &[u32],
        sample: Vec<u32>,
        params: &GrowParams,
        rng: &mut R,
    ) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack: Vec<(u32, Vec<u32>)> = Vec::new();
        nodes.push(Node {
            parent: None,
            kind: NodeKind::Leaf(empty_leaf()),
        });
        stack.push((0, sample));

        while let Some((id, rows)) = stack.pop() {
            let counts = class_counts(labels, &rows, params.n_classes);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || rows.len() < 2 * params.min_node_size {
                None
            } else {
                best_split(data, labels, &rows, &counts, params, rng)
            };
            match split {
                None => {
                    let mut distinct = rows.clone();
                    distinct.sort_unstable();
                    distinct.dedup();
                    nodes[id as usize].kind = NodeKind::Leaf(Leaf {
                        class_counts: counts,
                        rows: distinct,
                    });
                }
                Some(rule) => {
                    let f = rule.feature();
                    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                        .iter()
                        .partition(|&&r| rule.goes_left(data.get(r as usize, f)));
                    let left = nodes.len() as u32;
                    let right = left + 1;
                    for _ in 0..2 {
                        nodes.push(Node {
                            parent: Some(id),
                            kind: NodeKind::Leaf(empty_leaf()),
                        });
                    }
                    nodes[id as usize].kind = NodeKind::Internal { rule, left, right };
                    // right first so the left subtree is finished first
                    stack.push((right, right_rows));
                    stack.push((left, left_rows));
                }
            }
        }
        Tree { nodes }
    }
}

fn empty_leaf() -> Leaf {
    Leaf {
        class_counts: Vec::new(),
        rows: Vec::new(),
    }
}

fn class_counts(labels: &[u32], rows: &[u32], k: usize) -> Vec<u32> {
    let mut counts = vec![0u32; k];
    for &r in rows {
        counts[labels[r as usize] as usize] += 1;
    }
    counts
}

#[inline]
fn sum_sq_over_n(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>() / n as f64
}

/// Best Gini split over `mtry` random candidate features. Candidates are
/// scanned in ascending feature order and only strictly better scores replace
/// the incumbent, so ties resolve to the lowest feature, then the lowest
/// threshold (or first subset in enumeration order).
fn best_split<R: Rng>(
    data: &Encoded,
    labels: &[u32],
    rows: &[u32],
    counts: &[u32],
    params: &GrowParams,
    rng: &mut R,
) -> Option<SplitRule> {
    let p = data.columns.len();
    let mtry = params.mtry.clamp(1, p);
    let mut candidates = sample(rng, p, mtry).into_vec();
    candidates.sort_unstable();

    let mut best: Option<(f64, SplitRule)> = None;
    for f in candidates {
        let found = if data.n_levels[f] == 0 {
            numeric_split(data, labels, rows, counts, f, params)
        } else {
            categorical_split(data, labels, rows, f, params)
        };
        if let Some((score, rule)) = found {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, rule));
            }
        }
    }
    best.map(|(_, rule)| rule)
}

fn numeric_split(
    data: &Encoded,
    labels: &[u32],
    rows: &[u32],
    counts: &[u32],
    f: usize,
    params: &GrowParams,
) -> Option<(f64, SplitRule)> {
    let col = &data.columns[f];
    let mut pairs: Vec<(f64, u32)> = rows
        .iter()
        .map(|&r| (col[r as usize], labels[r as usize]))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len() as u32;
    let min = params.min_node_size as u32;

    let mut left = vec![0u32; params.n_classes];
    let mut right = counts.to_vec();
    let mut left_sq = 0.0f64;
    let mut right_sq: f64 = right.iter().map(|&c| (c as f64).powi(2)).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..pairs.len() - 1 {
        let c = pairs[i].1 as usize;
        left_sq += 2.0 * left[c] as f64 + 1.0;
        right_sq -= 2.0 * right[c] as f64 - 1.0;
        left[c] += 1;
        right[c] -= 1;
        let (v, next) = (pairs[i].0, pairs[i + 1].0);
        if v >= next {
            continue;
        }
        let n_left = i as u32 + 1;
        let n_right = n - n_left;
        if n_left < min || n_right < min {
            continue;
        }
        let score = left_sq / n_left as f64 + right_sq / n_right as f64;
        if best.is_none_or(|(b, _)| score > b) {
            let mut t = v + (next - v) / 2.0;
            if t >= next {
                t = v;
            }
            best = Some((score, t));
        }
    }
    best.map(|(score, threshold)| {
        (
            score,
            SplitRule::Numeric {
                feature: f,
                threshold,
            },
        )
    })
}

fn categorical_split(
    data: &Encoded,
    labels: &[u32],
    rows: &[u32],
    f: usize,
    params: &GrowParams,
) -> Option<(f64, SplitRule)> {
    let n_levels = data.n_levels[f];
    let k = params.n_classes;
    let col = &data.columns[f];
    let mut per_level = vec![0u32; n_levels * k];
    for &r in rows {
        let level = col[r as usize] as usize;
        per_level[level * k + labels[r as usize] as usize] += 1;
    }
    let level_total = |l: usize| per_level[l * k..(l + 1) * k].iter().sum::<u32>();
    let present: Vec<usize> = (0..n_levels).filter(|&l| level_total(l) > 0).collect();
    if present.len() < 2 {
        return None;
    }
    let min = params.min_node_size as u32;
    let total: Vec<u32> = (0..k)
        .map(|c| present.iter().map(|&l| per_level[l * k + c]).sum())
        .collect();

    let evaluate = |left_set: &[usize]| -> Option<f64> {
        let mut left = vec![0u32; k];
        for &l in left_set {
            for c in 0..k {
                left[c] += per_level[l * k + c];
            }
        }
        let right: Vec<u32> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let n_left: u32 = left.iter().sum();
        let n_right: u32 = right.iter().sum();
        if n_left < min || n_right < min || n_left == 0 || n_right == 0 {
            return None;
        }
        Some(sum_sq_over_n(&left, n_left) + sum_sq_over_n(&right, n_right))
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |set: Vec<usize>| {
        if let Some(score) = evaluate(&set) {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, set));
            }
        }
    };
    if n_levels <= EXHAUSTIVE_LEVELS {
        // the last present level always stays right, so each partition is seen once
        let m = present.len();
        for mask in 1u32..(1 << (m - 1)) {
            let set = (0..m - 1)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| present[b])
                .collect();
            consider(set);
        }
    } else {
        for &l in &present {
            consider(vec![l]);
        }
    }
    best.map(|(score, set)| {
        let mut left_levels: Vec<u32> = set.into_iter().map(|l| l as u32).collect();
        left_levels.sort_unstable();
        (
            score,
            SplitRule::Categorical {
                feature: f,
                left_levels,
            },
        )
    })
}
