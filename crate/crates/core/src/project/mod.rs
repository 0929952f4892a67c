//! Joint low-dimensional projection of fused vectors before matching.

mod tsne;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use tsne::{
    joint_probabilities, kl_divergence, kl_gradient, perplexity_calibration, squared_distances,
    tsne_embed, Calibration, ENTROPY_TOLERANCE, EXAGGERATION_ITERS, MAX_BISECTIONS,
    PROBABILITY_FLOOR,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub n_components: usize,
    /// Clamped to `(N - 1) / 3` when larger.
    pub perplexity: f64,
    pub learning_rate: f64,
    pub n_iter: usize,
    /// Multiplies `P` for the first 250 iterations.
    pub early_exaggeration: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            n_components: 2,
            perplexity: 30.0,
            learning_rate: 200.0,
            n_iter: 1000,
            early_exaggeration: 12.0,
            seed: 0,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::param("n_components must be positive"));
        }
        if !(self.perplexity > 0.0) {
            return Err(Error::param("perplexity must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if self.n_iter < EXAGGERATION_ITERS {
            return Err(Error::param(format!("n_iter must be at least {EXAGGERATION_ITERS}")));
        }
        if !(self.early_exaggeration >= 1.0) {
            return Err(Error::param("early_exaggeration must be >= 1"));
        }
        Ok(())
    }

    /// Validates for `n` points and applies the perplexity clamp.
    pub fn resolve(&self, n: usize) -> Result<TsneParams> {
        self.validate()?;
        if n < 4 {
            return Err(Error::param(format!(
                "t-SNE needs at least 4 points, got {n}; disable projection (bypass) for tiny sets"
            )));
        }
        let ceiling = (n - 1) as f64 / 3.0;
        let mut resolved = self.clone();
        if resolved.perplexity > ceiling {
            log::info!("perplexity {} clamped to {ceiling:.3} for {n} points", self.perplexity);
            resolved.perplexity = ceiling;
        }
        if resolved.perplexity < 1.0 {
            return Err(Error::param(format!(
                "perplexity {:.3} < 1 for {n} points; disable projection (bypass) instead",
                resolved.perplexity
            )));
        }
        Ok(resolved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub iteration: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub coordinates: Array2<f64>,
    /// KL divergence every 50 iterations.
    pub kl_trace: Vec<KlPoint>,
    /// Parameters actually used, after clamping.
    pub params: TsneParams,
    pub unconverged_rows: usize,
}

/// t-SNE coordinates when `enabled`, otherwise the input unchanged.
pub fn project_or_bypass(vectors: ArrayView2<f64>, params: &TsneParams, enabled: bool) -> Result<Array2<f64>> {
    if enabled {
        if vectors.nrows() < 4 {
            let clamped = (vectors.nrows().max(1) - 1) as f64 / 3.0;
            return Err(Error::param(format!(
                "{} points give perplexity {clamped:.3} < 1; disable projection (bypass)",
                vectors.nrows()
            )));
        }
        Ok(tsne_embed(vectors, params)?.coordinates)
    } else {
        Ok(vectors.to_owned())
    }
}
