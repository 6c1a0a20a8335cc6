//! Second-order regression trees: leaves hold `sum(g) / (sum(h) + lambda)` and
//! splits maximize the matching gain. With `h = 1` and `lambda = 0` this is an
//! ordinary least-squares CART tree on targets `g`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::TaskRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda: f64,
    /// Features considered per split; `None` means all.
    pub mtry: Option<usize>,
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    /// Row of each sample (rows may repeat under bootstrap).
    rows: &'a [usize],
    g: &'a [f64],
    h: &'a [f64],
    params: TreeParams,
    rng: Option<&'a mut TaskRng>,
    nodes: Vec<Node>,
    go_left: Vec<bool>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn value(&self, sample: usize, feature: usize) -> f64 {
        self.x[(self.rows[sample], feature)]
    }

    fn leaf_value(&self, gsum: f64, hsum: f64) -> f64 {
        let denom = hsum + self.params.lambda;
        if denom > 0.0 {
            gsum / denom
        } else {
            0.0
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x.ncols();
        match (self.params.mtry, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < p => {
                let mut f = sample(rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, orders: &[Vec<usize>], gsum: f64, hsum: f64) -> Option<BestSplit> {
        let lambda = self.params.lambda;
        let min_leaf = self.params.min_leaf;
        let count = orders[0].len();
        let parent = gsum * gsum / (hsum + lambda);
        let mut best: Option<BestSplit> = None;
        for f in self.candidate_features() {
            let order = &orders[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..count.saturating_sub(1) {
                let s = order[k];
                gl += self.g[s];
                hl += self.h[s];
                let left_n = k + 1;
                if left_n < min_leaf || count - left_n < min_leaf {
                    continue;
                }
                let here = self.value(s, f);
                let next = self.value(order[k + 1], f);
                if here >= next {
                    continue;
                }
                let (gr, hr) = (gsum - gl, hsum - hl);
                if hl + lambda <= 0.0 || hr + lambda <= 0.0 {
                    continue;
                }
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.as_ref().map_or(true, |b| gain > b.gain) {
                    let mut threshold = 0.5 * (here + next);
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        best
    }

    fn build(&mut self, orders: Vec<Vec<usize>>, depth: usize) -> usize {
        let (gsum, hsum) = orders[0].iter().fold((0.0, 0.0), |(g, h), &s| (g + self.g[s], h + self.h[s]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: self.leaf_value(gsum, hsum) });
        if depth >= self.params.max_depth || orders[0].len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&orders, gsum, hsum) else {
            return id;
        };
        for &s in &orders[0] {
            self.go_left[s] = self.value(s, split.feature) <= split.threshold;
        }
        let mut left_orders = Vec::with_capacity(orders.len());
        let mut right_orders = Vec::with_capacity(orders.len());
        for order in orders {
            let (l, r): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&s| self.go_left[s]);
            left_orders.push(l);
            right_orders.push(r);
        }
        let left = self.build(left_orders, depth + 1);
        let right = self.build(right_orders, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// Grows a tree on samples `rows` (indices into `x`, repeats allowed) with
/// per-sample first/second-order statistics `g`, `h`.
pub(super) fn grow(
    x: &DMatrix<f64>,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    params: TreeParams,
    rng: Option<&mut TaskRng>,
) -> Tree {
    let m = rows.len();
    let orders: Vec<Vec<usize>> = (0..x.ncols())
        .map(|f| {
            let mut o: Vec<usize> = (0..m).collect();
            o.sort_by(|&a, &b| x[(rows[a], f)].total_cmp(&x[(rows[b], f)]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut builder =
        Builder { x, rows, g, h, params, rng, nodes: Vec::new(), go_left: vec![false; m] };
    if m == 0 {
        return Tree { nodes: vec![Node::Leaf { value: 0.0 }] };
    }
    builder.build(orders, 0);
    Tree { nodes: builder.nodes }
}
