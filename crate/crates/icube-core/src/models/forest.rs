use super::{Features, LearnerSpec};
use crate::error::{invalid, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf(f64),
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

/// Axis-aligned binary tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Bagged trees. Classifiers average per-tree majority votes; regressors
/// average leaf means. A single-tree forest trains on the full sample.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    classifier: bool,
}

impl Forest {
    pub(super) fn fit(spec: &LearnerSpec, x: &Features, y: &[f64], classifier: bool) -> Result<Forest> {
        if spec.trees == 0 {
            return Err(invalid("a forest needs at least one tree"));
        }
        if spec.min_leaf == 0 {
            return Err(invalid("min_leaf must be positive"));
        }
        let n = y.len();
        let mtry = spec.features_per_split.resolve(x.d);
        let trees = (0..spec.trees)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::rng(rng::derive(spec.seed, t as u64));
                let mut idx: Vec<usize> = if spec.trees > 1 {
                    (0..n).map(|_| r.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    classifier,
                    max_depth: spec.max_depth,
                    min_leaf: spec.min_leaf,
                    mtry,
                    rng: r,
                    scratch: Vec::with_capacity(n),
                    order: (0..x.d).collect(),
                    nodes: Vec::new(),
                };
                b.build(&mut idx, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Forest { trees, classifier })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let total: f64 = if self.classifier {
            self.trees
                .iter()
                .map(|t| {
                    let p = t.predict(x);
                    if p > 0.5 {
                        1.0
                    } else if p < 0.5 {
                        0.0
                    } else {
                        0.5
                    }
                })
                .sum()
        } else {
            self.trees.iter().map(|t| t.predict(x)).sum()
        };
        total / self.trees.len() as f64
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

struct Builder<'a> {
    x: &'a Features,
    y: &'a [f64],
    classifier: bool,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: rng::Rng,
    scratch: Vec<(f64, f64)>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len();
        let m = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let value = if self.classifier {
            idx.iter().filter(|&&i| self.y[i] > 0.0).count() as f64 / m as f64
        } else {
            sum / m as f64
        };
        self.nodes.push(Node::Leaf(value));
        if depth >= self.max_depth || m < 2 * self.min_leaf || self.x.d == 0 || self.is_pure(idx) {
            return id as u32;
        }
        let Some((feature, threshold)) = self.best_split(idx, sum) else {
            return id as u32;
        };
        let d = self.x.d;
        let vals = &self.x.values;
        let mut split = 0;
        for k in 0..m {
            if vals[idx[k] * d + feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature: feature as u32, threshold, left, right };
        id as u32
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.y[idx[0]];
        idx.iter().all(|&i| self.y[i] == first)
    }

    /// Best split over a random feature subset; ties keep the lowest feature
    /// index, then the lowest threshold.
    fn best_split(&mut self, idx: &[usize], sum: f64) -> Option<(usize, f64)> {
        let m = idx.len();
        let d = self.x.d;
        let (chosen, _) = self.order.partial_shuffle(&mut self.rng, self.mtry);
        let mut feats = chosen.to_vec();
        feats.sort_unstable();
        let mf = m as f64;
        let pos_total = if self.classifier { idx.iter().filter(|&&i| self.y[i] > 0.0).count() as f64 } else { 0.0 };
        let parent = if self.classifier { -pos_total * (mf - pos_total) / mf } else { sum * sum / mf };
        let tol = 1e-12 * parent.abs().max(1.0);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in feats {
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (self.x.values[i * d + f], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let s = &self.scratch;
            if s[0].0 == s[m - 1].0 {
                continue;
            }
            let mut acc = 0.0;
            for k in 1..m {
                acc += if self.classifier { (s[k - 1].1 > 0.0) as u8 as f64 } else { s[k - 1].1 };
                if k < self.min_leaf || m - k < self.min_leaf || s[k - 1].0 == s[k].0 {
                    continue;
                }
                let (kl, kr) = (k as f64, (m - k) as f64);
                let score = if self.classifier {
                    let pr = pos_total - acc;
                    -(acc * (kl - acc) / kl + pr * (kr - pr) / kr)
                } else {
                    acc * acc / kl + (sum - acc) * (sum - acc) / kr
                };
                if score > parent + tol && best.is_none_or(|b| score > b.0) {
                    best = Some((score, f, 0.5 * (s[k - 1].0 + s[k].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fit, FeaturesPerSplit, FittedModel, LearnerKind};
    use super::*;

    fn grid(n: usize) -> (Features, Vec<f64>) {
        let mut x = Features::new(2);
        let mut y = Vec::new();
        for i in 0..n {
            let a = (i % 10) as f64;
            let b = (i / 10) as f64;
            x.push(&[a, b]);
            y.push(if a >= 5.0 { 3.0 } else { -1.0 });
        }
        (x, y)
    }

    #[test]
    fn single_stump_predicts_training_mean() {
        let (x, y) = grid(50);
        let spec = LearnerSpec { trees: 1, max_depth: 0, ..LearnerSpec::forest_regressor(1) };
        let m = fit(&spec, &x, &y).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert_eq!(m.predict(&[0.0, 0.0]), mean);
        assert_eq!(m.predict(&[9.0, 4.0]), mean);
    }

    #[test]
    fn constant_labels_give_constant_predictor() {
        let (x, _) = grid(40);
        let ones = vec![1.0; 40];
        let c = fit(&LearnerSpec::forest_classifier(2), &x, &ones).unwrap();
        assert_eq!(c.predict(&[3.0, 1.0]), 1.0);
        assert_eq!(c.predict(&[100.0, -7.0]), 1.0);
        let r = fit(&LearnerSpec::forest_regressor(2), &x, &vec![2.5; 40]).unwrap();
        assert_eq!(r.predict(&[-1.0, 9.0]), 2.5);
    }

    #[test]
    fn single_full_tree_recovers_step() {
        let (x, y) = grid(100);
        let spec = LearnerSpec {
            trees: 1,
            features_per_split: FeaturesPerSplit::All,
            min_leaf: 1,
            ..LearnerSpec::forest_regressor(0)
        };
        let m = fit(&spec, &x, &y).unwrap();
        if let FittedModel::Forest(f) = &m {
            assert_eq!(f.trees()[0].depth(), 1);
        }
        assert_eq!(m.predict(&[4.0, 0.0]), -1.0);
        assert_eq!(m.predict(&[5.0, 0.0]), 3.0);
        assert_eq!(m.predict(&[4.5, 0.0]), -1.0);
    }

    #[test]
    fn split_ties_prefer_lowest_feature() {
        let mut x = Features::new(2);
        let mut y = Vec::new();
        for i in 0..20 {
            let v = (i >= 10) as u8 as f64;
            x.push(&[v, v]);
            y.push(v);
        }
        let spec = LearnerSpec {
            trees: 1,
            features_per_split: FeaturesPerSplit::All,
            min_leaf: 1,
            ..LearnerSpec::forest_regressor(0)
        };
        let FittedModel::Forest(f) = fit(&spec, &x, &y).unwrap() else { unreachable!() };
        match f.trees()[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
            }
            Node::Leaf(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn same_seed_same_predictions() {
        let (x, y) = grid(100);
        let spec = LearnerSpec { kind: LearnerKind::ForestRegressor, ..LearnerSpec::forest_regressor(9) };
        let a = fit(&spec, &x, &y).unwrap();
        let b = fit(&spec, &x, &y).unwrap();
        for i in 0..100 {
            assert_eq!(a.predict(x.row(i)).to_bits(), b.predict(x.row(i)).to_bits());
        }
    }

    #[test]
    fn classifier_rejects_non_sign_labels() {
        let (x, y) = grid(20);
        assert!(fit(&LearnerSpec::forest_classifier(0), &x, &y).is_err());
    }

    #[test]
    fn depth_is_bounded() {
        let (x, y) = grid(100);
        let spec = LearnerSpec { max_depth: 3, min_leaf: 1, ..LearnerSpec::forest_regressor(4) };
        let FittedModel::Forest(f) = fit(&spec, &x, &y).unwrap() else { unreachable!() };
        assert!(f.trees().iter().all(|t| t.depth() <= 3));
    }
}
