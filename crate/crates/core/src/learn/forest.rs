//! Random forest of Gini decision trees with bootstrap sampling and √d
//! features per split.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { class: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Forest {
    pub(crate) trees: Vec<Tree>,
}

impl Forest {
    /// Trains `n_trees` trees; tree `i` draws from its own stream derived from
    /// `seed`, so trees are independent of training order.
    pub fn fit(data: &Dataset, n_trees: usize, min_samples_leaf: usize, seed: u64) -> Self {
        let trees = (0..n_trees)
            .map(|i| {
                let mut rng = rng::stream(seed, &[rng::tag("tree"), i as u64]);
                let n = data.len();
                let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow(data, boot, min_samples_leaf.max(1), &mut rng)
            })
            .collect();
        Self { trees }
    }

    /// Fraction of trees voting for class 1.
    pub fn vote_fraction(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let votes: usize = self.trees.iter().map(|t| usize::from(t.predict(x))).sum();
        votes as f64 / self.trees.len() as f64
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn grow(data: &Dataset, samples: Vec<usize>, min_leaf: usize, rng: &mut Rng) -> Tree {
    let mut nodes = Vec::new();
    // (node index, samples)
    let mut stack = vec![(0usize, samples)];
    nodes.push(Node::Leaf { class: 0 });
    let d = data.dim();
    let mtry = ((d as f64).sqrt().floor() as usize).clamp(1, d.max(1));
    while let Some((at, idx)) = stack.pop() {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| data.label(i) == 1).count();
        let majority = u8::from(2 * pos > n || (2 * pos == n && pos > 0 && rng.random_bool(0.5)));
        if pos == 0 || pos == n || n < 2 * min_leaf {
            nodes[at] = Node::Leaf { class: majority };
            continue;
        }
        let parent = gini(pos, n);
        let mut best: Option<Candidate> = None;
        let mut order = idx.clone();
        for f in sample(rng, d, mtry).into_iter() {
            order.sort_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(data.label(order[k - 1]));
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (lo, hi) = (data.row(order[k - 1])[f], data.row(order[k])[f]);
                if lo == hi {
                    continue;
                }
                let imp = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k)) / n as f64;
                if best.as_ref().is_none_or(|b| imp < b.impurity) {
                    best = Some(Candidate { feature: f, threshold: 0.5 * (lo + hi), impurity: imp });
                }
            }
        }
        match best {
            Some(c) if c.impurity < parent => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| data.row(i)[c.feature] <= c.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { class: 0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { class: 0 });
                nodes[at] = Node::Split { feature: c.feature, threshold: c.threshold, left, right };
                stack.push((right, r));
                stack.push((left, l));
            }
            _ => nodes[at] = Node::Leaf { class: majority },
        }
    }
    Tree { nodes }
}
