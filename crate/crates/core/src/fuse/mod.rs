//! Per-backend feature scoring, top-k selection and concatenation.

mod extra_trees;
mod fisher;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use extra_trees::extra_trees_importance;
pub use fisher::{encode_labels, fisher_scores, FISHER_EPSILON};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMethod {
    #[default]
    Fisher,
    ExtraTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub method: SelectorMethod,
    /// Features kept per backend; `None` means `min(256, d)`.
    pub top_k: Option<usize>,
    pub trees: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            method: SelectorMethod::Fisher,
            top_k: None,
            trees: 100,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == Some(0) {
            return Err(Error::param("top_k must be at least 1"));
        }
        if self.trees == 0 {
            return Err(Error::param("trees must be at least 1"));
        }
        if self.min_samples_split == 0 {
            return Err(Error::param("min_samples_split must be positive"));
        }
        Ok(())
    }

    pub fn effective_k(&self, dim: usize) -> usize {
        self.top_k.unwrap_or(DEFAULT_TOP_K.min(dim))
    }
}

pub fn score_features(
    vectors: ArrayView2<f64>,
    labels: &[usize],
    cfg: &SelectorConfig,
) -> Result<Vec<f64>> {
    match cfg.method {
        SelectorMethod::Fisher => fisher_scores(vectors, labels),
        SelectorMethod::ExtraTrees => extra_trees_importance(vectors, labels, cfg),
    }
}

/// Indices of the `k` highest scores, ties toward the lower index, returned
/// in increasing order. `k > len` is clamped with a warning.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let k = if k > scores.len() {
        log::warn!("top_k {k} exceeds dimension {}; keeping all", scores.len());
        scores.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Keeps the `k` best-scoring entries of `vector` in their original order.
pub fn select_top_k<T: Copy>(vector: &[T], scores: &[f64], k: usize) -> Result<(Vec<T>, Vec<usize>)> {
    if vector.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} scores",
            vector.len(),
            scores.len()
        )));
    }
    let kept = top_k_indices(scores, k)?;
    Ok((kept.iter().map(|&i| vector[i]).collect(), kept))
}

/// Kept-index list, persisted as `{"backend": name, "indices": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptIndices {
    pub backend: String,
    pub indices: Vec<usize>,
}

impl KeptIndices {
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.indices
            .iter()
            .map(|&i| {
                values.get(i).copied().ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "index {i} out of range for {} values ({})",
                        values.len(),
                        self.backend
                    ))
                })
            })
            .collect()
    }
}

/// Scores features on the fit set and keeps the best `k`.
pub fn fit_selection(
    backend: &str,
    fit_vectors: ArrayView2<f64>,
    fit_labels: &[usize],
    cfg: &SelectorConfig,
) -> Result<KeptIndices> {
    cfg.validate()?;
    let scores = score_features(fit_vectors, fit_labels, cfg)?;
    let indices = top_k_indices(&scores, cfg.effective_k(scores.len()))?;
    Ok(KeptIndices {
        backend: backend.to_string(),
        indices,
    })
}

/// One backend's reduced vector for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedVector {
    pub backend: String,
    pub record: String,
    pub values: Vec<f64>,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub values: Vec<f64>,
    /// `(backend, kept indices)` in concatenation order.
    pub layout: Vec<(String, Vec<usize>)>,
}

/// Concatenates reduced vectors in the given backend order.
pub fn fuse(parts: &[ReducedVector]) -> Result<FusedVector> {
    let first = parts
        .first()
        .ok_or_else(|| Error::input("fuse needs at least one vector"))?;
    let mut values = Vec::new();
    let mut layout = Vec::with_capacity(parts.len());
    for part in parts {
        if part.record != first.record {
            return Err(Error::input(format!(
                "record mismatch: {} vs {}",
                first.record, part.record
            )));
        }
        if part.values.is_empty() {
            return Err(Error::input(format!("empty vector from {}", part.backend)));
        }
        if part.values.len() != part.indices.len() || !part.indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::input(format!(
                "layout of {} must be strictly increasing and match its values",
                part.backend
            )));
        }
        values.extend_from_slice(&part.values);
        layout.push((part.backend.clone(), part.indices.clone()));
    }
    Ok(FusedVector { values, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_k_indices(&[3.0, 1.0, 2.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0], 1).unwrap(), vec![0]);
        assert_eq!(top_k_indices(&[1.0, 2.0], 5).unwrap(), vec![0, 1]);
        assert!(top_k_indices(&[1.0], 0).is_err());
        let (v, idx) = select_top_k(&[10.0, 20.0, 30.0], &[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(v, vec![10.0, 30.0]);
        assert_eq!(idx, vec![0, 2]);
    }

    fn part(backend: &str, record: &str, n: usize) -> ReducedVector {
        ReducedVector {
            backend: backend.into(),
            record: record.into(),
            values: (0..n).map(|i| i as f64).collect(),
            indices: (0..n).map(|i| i * 2).collect(),
        }
    }

    #[test]
    fn fuse_concatenates_in_order() {
        let f = fuse(&[part("vgg16", "r", 256), part("mobilenet", "r", 256)]).unwrap();
        assert_eq!(f.values.len(), 512);
        assert_eq!(f.layout[0].0, "vgg16");
        let g = fuse(&[part("mobilenet", "r", 256), part("vgg16", "r", 256)]).unwrap();
        assert_ne!(f.layout, g.layout);
    }

    #[test]
    fn fuse_errors() {
        assert!(fuse(&[part("a", "r", 2), part("b", "other", 2)]).is_err());
        assert!(fuse(&[part("a", "r", 2), part("b", "r", 0)]).is_err());
        assert!(fuse(&[]).is_err());
    }

    #[test]
    fn kept_indices_json() {
        let k = KeptIndices {
            backend: "builtin".into(),
            indices: vec![1, 5],
        };
        assert_eq!(serde_json::to_string(&k).unwrap(), r#"{"backend":"builtin","indices":[1,5]}"#);
        assert_eq!(k.apply(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![1.0, 5.0]);
    }

    proptest! {
        #[test]
        fn selection_is_idempotent(scores in proptest::collection::vec(0u8..5, 1..40), k in 1usize..50) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let values: Vec<f64> = (0..scores.len()).map(|i| i as f64).collect();
            let (v1, i1) = select_top_k(&values, &scores, k).unwrap();
            let s1: Vec<f64> = i1.iter().map(|&i| scores[i]).collect();
            let (v2, i2) = select_top_k(&v1, &s1, k).unwrap();
            prop_assert_eq!(&v2, &v1);
            prop_assert_eq!(i2, (0..v1.len()).collect::<Vec<_>>());
            prop_assert!(i1.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
