//! Random forest of binary-split CART trees producing class probabilities.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BinaryMatrix, BitColumn};
use crate::error::{check_len, Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `floor(sqrt(m))`, at least 1.
    #[serde(default)]
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    /// 0 means unlimited.
    #[serde(default)]
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node_size: 10,
            max_depth: 0,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn with_trees(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidSpec("n_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidSpec("min_node_size must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidSpec("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_mtry(&self, m: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (m as f64).sqrt().floor() as usize)
            .clamp(1, m.max(1))
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature, or `u32::MAX` for a leaf.
    pub feature: u32,
    /// Child for value 0; the value-1 child follows in `right`.
    pub left: u32,
    pub right: u32,
    /// Leaf class-1 frequency.
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self {
            feature: LEAF,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn single_leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::leaf(value)],
        }
    }

    fn predict_with<F: Fn(usize) -> bool>(&self, x: F) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if node.is_leaf() {
                return node.value;
            }
            i = if x(node.feature as usize) {
                node.right
            } else {
                node.left
            } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub config: ForestConfig,
    /// Training outcome had a single class.
    pub constant: bool,
}

impl ForestModel {
    pub fn predict_proba(&self, x: &BinaryMatrix) -> Result<Vec<f64>> {
        check_len(self.n_features, x.cols())?;
        let inv = 1.0 / self.trees.len() as f64;
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| {
                let get = |f: usize| x.get(i, f);
                self.trees.iter().map(|t| t.predict_with(get)).sum::<f64>() * inv
            })
            .collect())
    }

    pub fn predict_row(&self, row: &[u8]) -> Result<f64> {
        check_len(self.n_features, row.len())?;
        let get = |f: usize| row[f] != 0;
        Ok(self.trees.iter().map(|t| t.predict_with(get)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn fit(x: &BinaryMatrix, y: &BitColumn, config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    check_len(x.rows(), y.len())?;
    let n = x.rows();
    if n < config.min_node_size || n == 0 {
        return Err(Error::InvalidSpec(format!(
            "{n} rows is below min_node_size {}",
            config.min_node_size
        )));
    }
    let ones = y.count_ones();
    if ones == 0 || ones == n {
        let value = if ones == 0 { 0.0 } else { 1.0 };
        return Ok(ForestModel {
            trees: vec![Tree::single_leaf(value); config.n_trees],
            n_features: x.cols(),
            config: config.clone(),
            constant: true,
        });
    }
    let mtry = config.resolved_mtry(x.cols());
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, config, mtry, &mut tree_rng(config, t)))
        .collect();
    Ok(ForestModel {
        trees,
        n_features: x.cols(),
        config: config.clone(),
        constant: false,
    })
}

fn tree_rng(config: &ForestConfig, t: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed::derive_path(config.seed, &[seed::stream::TREE, t as u64]))
}

/// Fit, and also return out-of-bag training predictions: each row averaged
/// over the trees whose bootstrap left it out. Rows that were in every
/// bootstrap get the full-forest in-sample prediction.
pub fn fit_oob(x: &BinaryMatrix, y: &BitColumn, config: &ForestConfig) -> Result<(ForestModel, Vec<f64>)> {
    let model = fit(x, y, config)?;
    let n = x.rows();
    if model.constant {
        let value = model.trees[0].nodes[0].value;
        return Ok((model, vec![value; n]));
    }
    let (sum, count) = model
        .trees
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            // Replays the bootstrap draw made while growing tree `t`.
            let mut rng = tree_rng(config, t);
            let mut in_bag = vec![false; n];
            for _ in 0..n {
                in_bag[rng.gen_range(0..n as u32) as usize] = true;
            }
            let mut sum = vec![0.0; n];
            let mut count = vec![0u32; n];
            for i in (0..n).filter(|&i| !in_bag[i]) {
                sum[i] = tree.predict_with(|f| x.get(i, f));
                count[i] = 1;
            }
            (sum, count)
        })
        .reduce(
            || (vec![0.0; n], vec![0u32; n]),
            |(mut s, mut c), (s2, c2)| {
                for i in 0..n {
                    s[i] += s2[i];
                    c[i] += c2[i];
                }
                (s, c)
            },
        );
    let fallback = model.predict_proba(x)?;
    let oob = (0..n)
        .map(|i| if count[i] > 0 { sum[i] / f64::from(count[i]) } else { fallback[i] })
        .collect();
    Ok((model, oob))
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

fn grow_tree<R: Rng>(
    x: &BinaryMatrix,
    y: &BitColumn,
    config: &ForestConfig,
    mtry: usize,
    rng: &mut R,
) -> Tree {
    let n = x.rows();
    let mut rows: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n as u32)).collect();
    let mut features: Vec<u32> = (0..x.cols() as u32).collect();
    let mut nodes = vec![Node::leaf(0.0)];
    let mut stack = vec![Pending {
        node: 0,
        start: 0,
        end: n,
        depth: 0,
    }];
    while let Some(p) = stack.pop() {
        let slice = &mut rows[p.start..p.end];
        let size = slice.len();
        let pos = slice.iter().filter(|&&r| y.get(r as usize)).count();
        nodes[p.node].value = pos as f64 / size as f64;
        if pos == 0
            || pos == size
            || size < config.min_node_size
            || x.cols() == 0
            || (config.max_depth > 0 && p.depth >= config.max_depth)
        {
            continue;
        }
        let parent_score = (pos * pos) as f64 / size as f64;
        let (chosen, _) = features.partial_shuffle(rng, mtry);
        let mut best: Option<(u32, f64)> = None;
        for &f in chosen.iter() {
            let col = x.column(f as usize);
            let mut n1 = 0usize;
            let mut y1 = 0usize;
            for &r in slice.iter() {
                if col.get(r as usize) {
                    n1 += 1;
                    y1 += usize::from(y.get(r as usize));
                }
            }
            let n0 = size - n1;
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let y0 = pos - y1;
            let score = (y0 * y0) as f64 / n0 as f64 + (y1 * y1) as f64 / n1 as f64;
            if score > parent_score + 1e-12 && best.is_none_or(|(_, b)| score > b) {
                best = Some((f, score));
            }
        }
        let Some((f, _)) = best else { continue };
        let col = x.column(f as usize);
        let mut split = 0;
        for i in 0..size {
            if !col.get(slice[i] as usize) {
                slice.swap(i, split);
                split += 1;
            }
        }
        let left = nodes.len();
        nodes.push(Node::leaf(0.0));
        nodes.push(Node::leaf(0.0));
        nodes[p.node].feature = f;
        nodes[p.node].left = left as u32;
        nodes[p.node].right = left as u32 + 1;
        stack.push(Pending {
            node: left,
            start: p.start,
            end: p.start + split,
            depth: p.depth + 1,
        });
        stack.push(Pending {
            node: left + 1,
            start: p.start + split,
            end: p.end,
            depth: p.depth + 1,
        });
    }
    Tree { nodes }
}
