//! Extremely randomized classification trees, used only for their Gini
//! feature importances.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::fisher::check_supervised;
use super::SelectorConfig;
use crate::error::{Error, Result};

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Weighted impurity decrease, already scaled by `node_size / n_total`.
    decrease: f64,
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_classes: usize,
    n_total: usize,
    max_features: usize,
    min_samples_split: usize,
    rng: ChaCha8Rng,
    importance: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        idx.iter().for_each(|&i| counts[self.labels[i]] += 1);
        counts
    }

    /// Grows the subtree over `idx` and books its impurity decreases.
    fn grow(&mut self, idx: Vec<usize>) {
        // Explicit stack keeps deep trees off the call stack.
        let mut stack = vec![idx];
        while let Some(node) = stack.pop() {
            let counts = self.class_counts(&node);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || node.len() < self.min_samples_split {
                continue;
            }
            let Some(split) = self.best_split(&node, &counts) else {
                continue;
            };
            self.importance[split.feature] += split.decrease;
            let (left, right): (Vec<usize>, Vec<usize>) = node
                .iter()
                .partition(|&&i| self.x[[i, split.feature]] <= split.threshold);
            // Right pushed first so the left child is expanded first.
            stack.push(right);
            stack.push(left);
        }
    }

    fn best_split(&mut self, node: &[usize], counts: &[usize]) -> Option<Split> {
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let parent = gini(counts, node.len());
        let mut best: Option<Split> = None;
        let mut drawn = 0;
        for &f in &features {
            if drawn == self.max_features {
                break;
            }
            let (lo, hi) = node.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.x[[i, f]];
                (lo.min(v), hi.max(v))
            });
            // Constant features in this node are skipped without using up a draw.
            if lo >= hi {
                continue;
            }
            drawn += 1;
            let threshold = self.rng.random_range(lo..hi);
            let mut left = vec![0usize; self.n_classes];
            let mut n_left = 0;
            for &i in node {
                if self.x[[i, f]] <= threshold {
                    left[self.labels[i]] += 1;
                    n_left += 1;
                }
            }
            let n_right = node.len() - n_left;
            if n_left == 0 || n_right == 0 {
                continue;
            }
            let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let n = node.len() as f64;
            let child = (n_left as f64 / n) * gini(&left, n_left) + (n_right as f64 / n) * gini(&right, n_right);
            let decrease = n / self.n_total as f64 * (parent - child);
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                best = Some(Split {
                    feature: f,
                    threshold,
                    decrease,
                });
            }
        }
        best
    }
}

/// Normalized Gini importances from `cfg.trees` extremely randomized trees.
/// Tree `t` draws from a generator seeded with `cfg.seed ^ t`, so results do
/// not depend on thread count. All zeros when no tree could split.
pub fn extra_trees_importance(
    vectors: ArrayView2<f64>,
    labels: &[usize],
    cfg: &SelectorConfig,
) -> Result<Vec<f64>> {
    let (n, d) = vectors.dim();
    let n_classes = check_supervised(n, labels)?;
    if cfg.trees == 0 {
        return Err(Error::param("trees must be at least 1"));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let max_features = ((d as f64).sqrt() as usize).max(1);
    let min_samples_split = cfg.min_samples_split.max(2);

    let per_tree: Vec<Vec<f64>> = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut builder = TreeBuilder {
                x: vectors,
                labels,
                n_classes,
                n_total: n,
                max_features,
                min_samples_split,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ t as u64),
                importance: vec![0.0; d],
            };
            builder.grow((0..n).collect());
            builder.importance
        })
        .collect();

    let mut total = vec![0.0; d];
    for tree in &per_tree {
        for (acc, v) in total.iter_mut().zip(tree) {
            *acc += v;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuse::SelectorMethod;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(trees: usize, seed: u64) -> SelectorConfig {
        SelectorConfig {
            method: SelectorMethod::ExtraTrees,
            top_k: None,
            trees,
            min_samples_split: 2,
            seed,
        }
    }

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                labels[i] as f64 * 10.0 + rng.random_range(0.0..1.0)
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        (x, labels)
    }

    #[test]
    fn separating_dimension_dominates() {
        let (x, y) = separable(40, 42);
        let imp = extra_trees_importance(x.view(), &y, &cfg(100, 42)).unwrap();
        assert!(imp[0] > imp[1], "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, y) = separable(30, 1);
        let a = extra_trees_importance(x.view(), &y, &cfg(20, 5)).unwrap();
        let b = extra_trees_importance(x.view(), &y, &cfg(20, 5)).unwrap();
        assert_eq!(a, b);
    }

    /// One stump on a single informative dimension: with one feature the
    /// root split is the only split that can separate, so the importance of
    /// the root decrease can be accounted by hand.
    #[test]
    fn stump_impurity_accounting() {
        // Two classes, perfectly separated on the only feature: any threshold
        // in [0, 1) splits {0,0} | {1,1} cleanly. Root gini 0.5, children 0.
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let y = [0, 0, 1, 1];
        let mut builder = TreeBuilder {
            x: x.view(),
            labels: &y,
            n_classes: 2,
            n_total: 4,
            max_features: 1,
            min_samples_split: 2,
            rng: ChaCha8Rng::seed_from_u64(0),
            importance: vec![0.0],
        };
        builder.grow(vec![0, 1, 2, 3]);
        assert!((builder.importance[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_data_gives_zeros() {
        let x = Array2::from_elem((6, 3), 1.0);
        let imp = extra_trees_importance(x.view(), &[0, 1, 0, 1, 0, 1], &cfg(5, 0)).unwrap();
        assert_eq!(imp, vec![0.0; 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn normalized_and_permutation_invariant(
            rows in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 4), 0usize..3), 6..24),
            shift in 1usize..23,
        ) {
            let n = rows.len();
            let mut labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let x = Array2::from_shape_fn((n, 4), |(i, j)| rows[i].0[j]);
            let c = cfg(10, 3);
            let base = extra_trees_importance(x.view(), &labels, &c).unwrap();
            prop_assert!(base.iter().all(|&v| v >= 0.0));
            prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-9);

            let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let px = Array2::from_shape_fn((n, 4), |(i, j)| x[[order[i], j]]);
            let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let permuted = extra_trees_importance(px.view(), &pl, &c).unwrap();
            prop_assert_eq!(permuted, base);
        }
    }
}
