use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const FISHER_EPSILON: f64 = 1e-12;

/// Maps arbitrary labels to dense class indices `0..k` in first-seen order.
pub fn encode_labels<T: PartialEq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut classes: Vec<&T> = Vec::new();
    let encoded = labels
        .iter()
        .map(|l| match classes.iter().position(|c| *c == l) {
            Some(i) => i,
            None => {
                classes.push(l);
                classes.len() - 1
            }
        })
        .collect();
    (encoded, classes.len())
}

pub(crate) fn check_supervised(n_rows: usize, labels: &[usize]) -> Result<usize> {
    if labels.len() != n_rows {
        return Err(Error::DimensionMismatch(format!(
            "{n_rows} rows vs {} labels",
            labels.len()
        )));
    }
    if n_rows < 2 {
        return Err(Error::input("feature scoring needs at least 2 samples"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::input("feature scoring needs at least 2 classes"));
    }
    Ok(n_classes)
}

/// Between-class over within-class scatter per dimension:
/// `sum_c n_c (mu_c - mu)^2 / (sum_c n_c var_c + eps)`.
pub fn fisher_scores(vectors: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let (n, d) = vectors.dim();
    let n_classes = check_supervised(n, labels)?;
    let mut counts = vec![0usize; n_classes];
    let mut class_sum = Array2::<f64>::zeros((n_classes, d));
    for (row, &c) in vectors.outer_iter().zip(labels) {
        counts[c] += 1;
        let mut acc = class_sum.row_mut(c);
        acc += &row;
    }
    let mut class_mean = class_sum;
    for (c, mut row) in class_mean.outer_iter_mut().enumerate() {
        if counts[c] > 0 {
            row /= counts[c] as f64;
        }
    }
    let overall: Vec<f64> = (0..d)
        .map(|j| vectors.column(j).iter().sum::<f64>() / n as f64)
        .collect();

    let mut within = vec![0.0; d];
    for (row, &c) in vectors.outer_iter().zip(labels) {
        for j in 0..d {
            within[j] += (row[j] - class_mean[[c, j]]).powi(2);
        }
    }
    Ok((0..d)
        .map(|j| {
            let between: f64 = (0..n_classes)
                .filter(|&c| counts[c] > 0)
                .map(|c| counts[c] as f64 * (class_mean[[c, j]] - overall[j]).powi(2))
                .sum();
            between / (within[j] + FISHER_EPSILON)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn perfect_separator_and_constant() {
        let x = array![[0.0, 5.0], [0.0, 5.0], [1.0, 5.0], [1.0, 5.0]];
        let s = fisher_scores(x.view(), &[0, 0, 1, 1]).unwrap();
        // between = 2 * 0.25 + 2 * 0.25 = 1, within = 0.
        assert!((s[0] - 1.0 / FISHER_EPSILON).abs() / (1.0 / FISHER_EPSILON) < 1e-12);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn rejects_single_class() {
        let x = array![[0.0], [1.0]];
        assert!(fisher_scores(x.view(), &[0, 0]).is_err());
        assert!(fisher_scores(array![[0.0]].view(), &[0]).is_err());
    }

    #[test]
    fn label_encoding() {
        let (enc, k) = encode_labels(&["b", "a", "b", "c"]);
        assert_eq!(enc, vec![0, 1, 0, 2]);
        assert_eq!(k, 3);
    }

    proptest! {
        #[test]
        fn invariant_to_scaling_and_permutation(
            rows in proptest::collection::vec((proptest::collection::vec(-10.0f64..10.0, 3), 0usize..3), 6..20),
            scale in 0.1f64..10.0,
            rot in 0usize..20,
        ) {
            let mut labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let n = rows.len();
            let x = Array2::from_shape_fn((n, 3), |(i, j)| rows[i].0[j]);
            let base = fisher_scores(x.view(), &labels).unwrap();

            let mut scaled = x.clone();
            scaled.column_mut(1).mapv_inplace(|v| v * scale);
            let s = fisher_scores(scaled.view(), &labels).unwrap();
            for j in 0..3 {
                prop_assert!((s[j] - base[j]).abs() <= 1e-9 * base[j].abs().max(1e-300));
            }

            let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let px = Array2::from_shape_fn((n, 3), |(i, j)| x[[order[i], j]]);
            let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let p = fisher_scores(px.view(), &pl).unwrap();
            for j in 0..3 {
                prop_assert!((p[j] - base[j]).abs() <= 1e-9 * base[j].abs().max(1e-300));
            }
        }
    }
}
