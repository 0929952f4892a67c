use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::error::{Error, Result};

/// Per-dimension sample mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub backend: String,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

pub fn fit_standardizer(vectors: &[&EmbeddingVector]) -> Result<Standardizer> {
    if vectors.len() < 2 {
        return Err(Error::input(format!(
            "standardizer needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let backend = &vectors[0].backend;
    let dim = vectors[0].values.len();
    for v in vectors {
        if &v.backend != backend {
            return Err(Error::input(format!(
                "mixed backends {backend} and {}",
                v.backend
            )));
        }
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values vs {dim}",
                v.values.len()
            )));
        }
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(&v.values) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for v in vectors {
        for ((s, &x), m) in var.iter_mut().zip(&v.values).zip(&mean) {
            *s += (x as f64 - m).powi(2);
        }
    }
    Ok(Standardizer {
        backend: backend.clone(),
        mean,
        stddev: var.into_iter().map(|s| (s / n).sqrt()).collect(),
    })
}

/// `(v - mean) / stddev` per dimension; zero-variance dimensions map to 0.
pub fn apply_standardizer(values: &[f32], stats: &Standardizer) -> Result<Vec<f64>> {
    if values.len() != stats.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector of {} vs standardizer of {}",
            values.len(),
            stats.mean.len()
        )));
    }
    Ok(values
        .iter()
        .zip(stats.mean.iter().zip(&stats.stddev))
        .map(|(&x, (&m, &s))| if s > 0.0 { (x as f64 - m) / s } else { 0.0 })
        .collect())
}

pub fn destandardize(values: &[f64], stats: &Standardizer) -> Vec<f64> {
    values
        .iter()
        .zip(stats.mean.iter().zip(&stats.stddev))
        .map(|(&z, (&m, &s))| z * s + m)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(values: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector {
            values,
            backend: "b".into(),
            record: "r".into(),
        }
    }

    #[test]
    fn hand_example() {
        let (a, b) = (ev(vec![0.0, 2.0]), ev(vec![2.0, 2.0]));
        let s = fit_standardizer(&[&a, &b]).unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.stddev, vec![1.0, 0.0]);
        assert_eq!(apply_standardizer(&[1.0, 2.0], &s).unwrap(), vec![0.0, 0.0]);
        assert_eq!(apply_standardizer(&[5.0, 123.0], &s).unwrap()[1], 0.0);
        assert!(apply_standardizer(&[1.0], &s).is_err());
    }

    #[test]
    fn error_cases() {
        let a = ev(vec![1.0]);
        assert!(fit_standardizer(&[&a]).is_err());
        let mut other = ev(vec![2.0]);
        other.backend = "c".into();
        assert!(fit_standardizer(&[&a, &other]).is_err());
    }

    proptest! {
        #[test]
        fn fit_set_is_standard(rows in proptest::collection::vec(proptest::collection::vec(-100.0f32..100.0, 4), 2..30)) {
            let vectors: Vec<_> = rows.into_iter().map(ev).collect();
            let refs: Vec<_> = vectors.iter().collect();
            let s = fit_standardizer(&refs).unwrap();
            let z: Vec<Vec<f64>> = vectors.iter().map(|v| apply_standardizer(&v.values, &s).unwrap()).collect();
            for d in 0..4 {
                let n = z.len() as f64;
                let mean = z.iter().map(|r| r[d]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                if s.stddev[d] > 1e-3 {
                    let sd = (z.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-6);
                    for (v, row) in vectors.iter().zip(&z) {
                        let back = destandardize(row, &s)[d];
                        prop_assert!((back - v.values[d] as f64).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
