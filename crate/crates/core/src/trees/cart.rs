//! Exhaustive-split regression tree growth.

use rand::seq::index::sample;

use crate::matrix::Matrix;
use crate::rng::Rng;

/// One node of a flattened tree. Leaves have `feature == None`; internal
/// nodes send `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub left: usize,
    #[serde(default)]
    pub right: usize,
    /// Leaf output; on internal nodes the value the node would predict as a leaf.
    pub value: f64,
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Tree {
            nodes: vec![TreeNode::leaf(value)],
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => i = if x[f] <= n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left).max(walk(t, n.right))
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn is_well_formed(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.is_leaf()
                || (n.threshold.is_finite()
                    && n.left < self.nodes.len()
                    && n.right < self.nodes.len())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LeafRule {
    Mean,
    /// `Σr / (count + λ)`
    Shrunk(f64),
}

pub(crate) struct GrowParams {
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` means all.
    pub features_per_split: Option<usize>,
    pub leaf: LeafRule,
}

/// The best split of a node as found by the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
}

/// Relative slack under which two candidate SSEs count as tied.
pub(crate) const TIE_EPS: f64 = 1e-12;

pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Grows a tree on `rows` (indices into `x`/`y`, duplicates allowed).
pub(crate) fn grow(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    params: &GrowParams,
    rng: &mut Rng,
) -> Tree {
    let d = x.cols();
    if d == 0 || rows.is_empty() {
        let s: f64 = rows.iter().map(|&r| y[r]).sum();
        let v = match params.leaf {
            LeafRule::Mean => s / rows.len().max(1) as f64,
            LeafRule::Shrunk(l2) => s / (rows.len() as f64 + l2).max(f64::MIN_POSITIVE),
        };
        return Tree::constant(v);
    }
    // positions into `rows`, sorted per feature, stable in position
    let sorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut p: Vec<u32> = (0..rows.len() as u32).collect();
            p.sort_by(|&a, &b| {
                x.get(rows[a as usize], f)
                    .total_cmp(&x.get(rows[b as usize], f))
            });
            p
        })
        .collect();
    let mut g = Grower {
        x,
        y,
        rows,
        params,
        nodes: Vec::new(),
        side: vec![false; rows.len()],
    };
    g.build(sorted, 0, rng);
    Tree { nodes: g.nodes }
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    rows: &'a [usize],
    params: &'a GrowParams,
    nodes: Vec<TreeNode>,
    side: Vec<bool>,
}

impl Grower<'_> {
    fn target(&self, p: u32) -> f64 {
        self.y[self.rows[p as usize]]
    }

    fn value(&self, pos: &[u32]) -> f64 {
        let s: f64 = pos.iter().map(|&p| self.target(p)).sum();
        match self.params.leaf {
            LeafRule::Mean => s / pos.len() as f64,
            LeafRule::Shrunk(l2) => s / (pos.len() as f64 + l2),
        }
    }

    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        let pos = &sorted[0];
        self.nodes.push(TreeNode::leaf(self.value(pos)));
        let n = pos.len();
        let first = self.target(pos[0]);
        let pure = pos.iter().all(|&p| self.target(p) == first);
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || n < 2 * self.params.min_node_size.max(1) {
            return id;
        }
        let d = sorted.len();
        let candidates: Vec<usize> = match self.params.features_per_split {
            Some(k) if k < d => {
                let mut c = sample(rng, d, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..d).collect(),
        };
        let Some(best) = best_split(self, &sorted, &candidates) else {
            return id;
        };
        for &p in &sorted[best.feature] {
            self.side[p as usize] =
                self.x.get(self.rows[p as usize], best.feature) <= best.threshold;
        }
        let (mut ls, mut rs) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for list in &sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&p| self.side[p as usize]);
            ls.push(l);
            rs.push(r);
        }
        drop(sorted);
        let left = self.build(ls, depth + 1, rng);
        let right = self.build(rs, depth + 1, rng);
        let node = &mut self.nodes[id];
        node.feature = Some(best.feature);
        node.threshold = best.threshold;
        node.left = left;
        node.right = right;
        id
    }
}

fn best_split(g: &Grower<'_>, sorted: &[Vec<u32>], candidates: &[usize]) -> Option<SplitChoice> {
    let n = sorted[0].len();
    let min = g.params.min_node_size.max(1);
    let mean = sorted[0].iter().map(|&p| g.target(p)).sum::<f64>() / n as f64;
    let total_sum: f64 = sorted[0].iter().map(|&p| g.target(p) - mean).sum();
    let total_sq: f64 = sorted[0]
        .iter()
        .map(|&p| (g.target(p) - mean).powi(2))
        .sum();
    let mut best: Option<SplitChoice> = None;
    for &f in candidates {
        let list = &sorted[f];
        let (mut s, mut q) = (0.0, 0.0);
        for i in 0..n - 1 {
            let t = g.target(list[i]) - mean;
            s += t;
            q += t * t;
            let nl = i + 1;
            let nr = n - nl;
            if nl < min || nr < min {
                continue;
            }
            let a = g.x.get(g.rows[list[i] as usize], f);
            let b = g.x.get(g.rows[list[i + 1] as usize], f);
            if a == b {
                continue;
            }
            let sr = total_sum - s;
            let qr = total_sq - q;
            let sse = (q - s * s / nl as f64).max(0.0) + (qr - sr * sr / nr as f64).max(0.0);
            let better = match best {
                None => true,
                Some(bst) => sse < bst.sse - TIE_EPS * total_sq.max(f64::MIN_POSITIVE),
            };
            if better {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(a, b),
                    sse,
                });
            }
        }
    }
    best
}
