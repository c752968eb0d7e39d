//! Probability forest for a binary target.
//!
//! Bootstrap-aggregated CART trees grown with the Gini criterion. Each node
//! draws `ceil(sqrt(d))` candidate features; a split is admissible only if
//! both children keep at least `min_leaf` bootstrap rows. Leaves store the
//! fraction of positives, and the forest averages leaf fractions over trees.
//!
//! Continuous features are pre-binned: up to `max_bins` distinct values are
//! split exactly at midpoints, beyond that at empirical quantiles.

use std::collections::HashMap;

use rand::Rng;

use super::design::{quantile_sorted, FeatureMatrix};
use super::Hyper;
use crate::seed;

const LEAF: u32 = u32::MAX;

/// Split nodes send `x[feature] <= value` to `left` and the rest to
/// `left + 1`. Leaves have `feature == LEAF` and store their fraction in
/// `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    feature: u32,
    left: u32,
    value: f64,
}

impl Node {
    fn leaf(p: f64) -> Self {
        Node {
            feature: LEAF,
            left: 0,
            value: p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut node = self.nodes[0];
        while node.feature != LEAF {
            let next = node.left + u32::from(x[node.feature as usize] > node.value);
            node = self.nodes[next as usize];
        }
        node.value
    }

    fn predict_col_major(&self, cols: &[Vec<f64>], i: usize) -> f64 {
        let mut node = self.nodes[0];
        while node.feature != LEAF {
            let next = node.left + u32::from(cols[node.feature as usize][i] > node.value);
            node = self.nodes[next as usize];
        }
        node.value
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    /// Cut points of the training bins, per feature. Every split threshold
    /// is one of them.
    cuts: Vec<Vec<f64>>,
}

/// Binned view of the training features.
struct Binned {
    /// Per feature, sorted cut points; bin `b` holds values in `(cut[b-1], cut[b]]`.
    cuts: Vec<Vec<f64>>,
    /// Per feature, the bin of every training row.
    bins: Vec<Vec<u16>>,
}

fn bin_of(cuts: &[f64], v: f64) -> u16 {
    cuts.partition_point(|&t| t < v) as u16
}

impl Binned {
    fn new(x: &FeatureMatrix, max_bins: usize) -> Self {
        let mut cuts = Vec::with_capacity(x.n_cols());
        let mut bins = Vec::with_capacity(x.n_cols());
        for col in &x.cols {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            let c: Vec<f64> = if distinct.len() <= max_bins {
                distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|i| quantile_sorted(&sorted, i as f64 / max_bins as f64))
                    .collect();
                c.dedup();
                if c.last() == sorted.last() {
                    c.pop();
                }
                c
            };
            bins.push(col.iter().map(|&v| bin_of(&c, v)).collect());
            cuts.push(c);
        }
        Binned { cuts, bins }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.cuts[f].len() + 1
    }
}

/// Rows that share every bin and the label are interchangeable for growing
/// a tree, so trees are grown on such groups with bootstrap multiplicities.
struct Groups {
    /// Group of every training row.
    of_row: Vec<usize>,
    /// Per feature, the bin of every group.
    bins: Vec<Vec<u16>>,
    y: Vec<u8>,
}

impl Groups {
    fn new(binned: &Binned, y: &[u8]) -> Self {
        let d = binned.bins.len();
        let mut index: HashMap<(Vec<u16>, u8), usize> = HashMap::new();
        let mut of_row = Vec::with_capacity(y.len());
        let mut bins = vec![Vec::new(); d];
        let mut gy = Vec::new();
        for (i, &yi) in y.iter().enumerate() {
            let key: Vec<u16> = binned.bins.iter().map(|col| col[i]).collect();
            let next = gy.len();
            let g = *index.entry((key, yi)).or_insert_with_key(|(k, _)| {
                for (col, &b) in bins.iter_mut().zip(k) {
                    col.push(b);
                }
                next
            });
            if g == next {
                gy.push(yi);
            }
            of_row.push(g);
        }
        Groups {
            of_row,
            bins,
            y: gy,
        }
    }
}

struct Grower<'a> {
    cuts: &'a [Vec<f64>],
    groups: &'a Groups,
    /// Bootstrap multiplicity of every group in the current tree.
    weight: Vec<u32>,
    min_leaf: usize,
    mtry: usize,
    counts: Vec<(u32, u32)>,
    touched: Vec<u16>,
    features: Vec<usize>,
}

impl Grower<'_> {
    fn best_split(
        &mut self,
        idx: &[usize],
        feature: usize,
        n_rows: u32,
        n_pos: u32,
    ) -> Option<(f64, u16)> {
        let bins = &self.groups.bins[feature];
        self.touched.clear();
        for &g in idx {
            let b = bins[g];
            let w = self.weight[g];
            let slot = &mut self.counts[b as usize];
            if slot.0 == 0 {
                self.touched.push(b);
            }
            slot.0 += w;
            slot.1 += w * u32::from(self.groups.y[g]);
        }
        self.touched.sort_unstable();
        let mut left_n = 0u32;
        let mut left_pos = 0u32;
        let mut best: Option<(f64, u16)> = None;
        let last = self.touched.len().saturating_sub(1);
        for &b in &self.touched[..last] {
            let (c, p) = self.counts[b as usize];
            left_n += c;
            left_pos += p;
            let right_n = n_rows - left_n;
            if (left_n as usize) < self.min_leaf || (right_n as usize) < self.min_leaf {
                continue;
            }
            let right_pos = n_pos - left_pos;
            let (ln, lp, rn, rp) = (
                left_n as f64,
                left_pos as f64,
                right_n as f64,
                right_pos as f64,
            );
            let score =
                (lp * lp + (ln - lp) * (ln - lp)) / ln + (rp * rp + (rn - rp) * (rn - rp)) / rn;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, b));
            }
        }
        for &b in &self.touched {
            self.counts[b as usize] = (0, 0);
        }
        let parent = {
            let (n, p) = (n_rows as f64, n_pos as f64);
            (p * p + (n - p) * (n - p)) / n
        };
        best.filter(|&(s, _)| s > parent + 1e-9)
    }

    fn grow(&mut self, idx: &mut [usize], rng: &mut impl Rng) -> Tree {
        let mut nodes = vec![Node::leaf(0.0)];
        // (node slot, start, end)
        let mut stack = vec![(0usize, 0usize, idx.len())];
        let n_features = self.cuts.len();
        while let Some((slot, start, end)) = stack.pop() {
            let part = &mut idx[start..end];
            let (mut n, mut pos) = (0u32, 0u32);
            for &g in part.iter() {
                n += self.weight[g];
                pos += self.weight[g] * u32::from(self.groups.y[g]);
            }
            let frac = f64::from(pos) / f64::from(n);
            if pos == 0 || pos == n || (n as usize) < 2 * self.min_leaf || self.mtry == 0 {
                nodes[slot] = Node::leaf(frac);
                continue;
            }
            if self.mtry < n_features {
                // partial Fisher-Yates: the first mtry entries are the draw
                for m in 0..self.mtry {
                    let j = rng.gen_range(m..n_features);
                    self.features.swap(m, j);
                }
            }
            let mut best: Option<(f64, usize, u16)> = None;
            for m in 0..self.mtry {
                let f = self.features[m];
                if let Some((score, b)) = self.best_split(part, f, n, pos) {
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, f, b));
                    }
                }
            }
            let Some((_, feature, bin)) = best else {
                nodes[slot] = Node::leaf(frac);
                continue;
            };
            let bins = &self.groups.bins[feature];
            let mut split = 0;
            for j in 0..part.len() {
                if bins[part[j]] <= bin {
                    part.swap(j, split);
                    split += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::leaf(0.0));
            nodes.push(Node::leaf(0.0));
            nodes[slot] = Node {
                feature: feature as u32,
                left: left as u32,
                value: self.cuts[feature][bin as usize],
            };
            stack.push((left + 1, start + split, end));
            stack.push((left, start, start + split));
        }
        Tree { nodes }
    }
}

impl Forest {
    pub fn fit(x: &FeatureMatrix, y: &[u8], hyper: &Hyper, seed: u64) -> Forest {
        let n = y.len();
        let d = x.n_cols();
        let binned = Binned::new(x, hyper.max_bins);
        let groups = Groups::new(&binned, y);
        let max_bins = (0..d).map(|f| binned.n_bins(f)).max().unwrap_or(1);
        let mtry = (d as f64).sqrt().ceil() as usize;
        let mut grower = Grower {
            cuts: &binned.cuts,
            groups: &groups,
            weight: vec![0; groups.y.len()],
            min_leaf: hyper.min_leaf,
            mtry: mtry.min(d),
            counts: vec![(0, 0); max_bins],
            touched: Vec::new(),
            features: (0..d).collect(),
        };
        let mut idx = Vec::with_capacity(groups.y.len());
        let trees = (0..hyper.n_trees)
            .map(|t| {
                let mut rng = seed::rng(seed::derive(seed, &[t as u64]));
                grower.weight.iter_mut().for_each(|w| *w = 0);
                for _ in 0..n {
                    grower.weight[groups.of_row[rng.gen_range(0..n)]] += 1;
                }
                idx.clear();
                idx.extend((0..groups.y.len()).filter(|&g| grower.weight[g] > 0));
                grower.grow(&mut idx, &mut rng)
            })
            .collect();
        Forest {
            trees,
            cuts: binned.cuts,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        // Rows in the same training bin on every feature fall in the same
        // leaves, so each distinct bin pattern is scored once.
        let mut index: HashMap<Vec<u16>, usize> = HashMap::new();
        let mut reps = Vec::new();
        let slot: Vec<usize> = (0..x.n_rows)
            .map(|i| {
                let key: Vec<u16> = self
                    .cuts
                    .iter()
                    .zip(&x.cols)
                    .map(|(c, col)| bin_of(c, col[i]))
                    .collect();
                let next = reps.len();
                let s = *index.entry(key).or_insert(next);
                if s == next {
                    reps.push(i);
                }
                s
            })
            .collect();
        // tree-major so each tree stays in cache while the rows pass through
        let mut sums = vec![0.0; reps.len()];
        for tree in &self.trees {
            for (s, &i) in sums.iter_mut().zip(&reps) {
                *s += tree.predict_col_major(&x.cols, i);
            }
        }
        let t = self.trees.len() as f64;
        slot.into_iter().map(|s| sums[s] / t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: cols.first().map_or(0, Vec::len),
            continuous: vec![true; cols.len()],
            cols,
        }
    }

    #[test]
    fn learns_step_function() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 10.0)).collect();
        let m = matrix(vec![x]);
        let f = Forest::fit(&m, &y, &Hyper::default(), 1);
        let p = f.predict(&matrix(vec![vec![2.0, 18.0]]));
        assert!(p[0] < 0.05 && p[1] > 0.95, "{p:?}");
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let x: Vec<f64> = (0..60).map(|i| (i * 7 % 13) as f64).collect();
        let y: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let m = matrix(vec![x]);
        let hyper = Hyper {
            n_trees: 7,
            ..Hyper::default()
        };
        let f = Forest::fit(&m, &y, &hyper, 9);
        let probe = [4.0];
        let mean = f.trees().iter().map(|t| t.predict_row(&probe)).sum::<f64>() / 7.0;
        assert_eq!(f.predict(&matrix(vec![vec![4.0]]))[0], mean);
    }

    #[test]
    fn batch_prediction_matches_row_walks() {
        let mut rng = seed::rng(4);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..400).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let y: Vec<u8> = (0..400)
            .map(|i| u8::from(cols[0][i] + cols[1][i] * cols[2][i] + 0.3 * rng.gen::<f64>() > 0.8))
            .collect();
        let hyper = Hyper {
            n_trees: 25,
            max_bins: 16,
            ..Hyper::default()
        };
        let f = Forest::fit(&matrix(cols.clone()), &y, &hyper, 3);
        let probe: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..300).map(|_| rng.gen::<f64>() * 1.2 - 0.1).collect())
            .collect();
        let batch = f.predict(&matrix(probe.clone()));
        for (i, &b) in batch.iter().enumerate() {
            let row = [probe[0][i], probe[1][i], probe[2][i]];
            let walk = f.trees().iter().map(|t| t.predict_row(&row)).sum::<f64>() / 25.0;
            assert_eq!(b, walk);
        }
    }

    #[test]
    fn pure_target_gives_single_leaf() {
        let m = matrix(vec![(0..30).map(f64::from).collect()]);
        let f = Forest::fit(&m, &[1; 30], &Hyper::default(), 2);
        assert!(f.trees().iter().all(|t| t.n_leaves() == 1));
        assert_eq!(f.predict(&m), vec![1.0; 30]);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64).collect();
        let y: Vec<u8> = (0..100).map(|i| u8::from((i * 37) % 101 > 40)).collect();
        let m = matrix(vec![x]);
        let a = Forest::fit(&m, &y, &Hyper::default(), 5);
        let b = Forest::fit(&m, &y, &Hyper::default(), 5);
        assert_eq!(a, b);
    }
}
