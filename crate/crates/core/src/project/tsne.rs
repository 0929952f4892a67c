//! Exact t-SNE.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KlPoint, ProjectionResult, TsneParams};
use crate::error::{Error, Result};

pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const MAX_BISECTIONS: usize = 50;
pub const PROBABILITY_FLOOR: f64 = 1e-12;
pub const EXAGGERATION_ITERS: usize = 250;
const INIT_STDDEV: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

/// Gaussian conditional distribution of one point over its neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Precision `1 / (2 sigma^2)`.
    pub beta: f64,
    pub sigma: f64,
    pub probabilities: Vec<f64>,
    /// Shannon entropy in bits.
    pub entropy: f64,
    /// `false` when the tolerance was not met within the bisection budget.
    pub converged: bool,
}

fn conditional(sq_distances: &[f64], d_min: f64, beta: f64) -> (Vec<f64>, f64) {
    let mut p: Vec<f64> = sq_distances
        .iter()
        .map(|&d| (-(d - d_min) * beta).exp())
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    let entropy = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.log2())
        .sum::<f64>();
    (p, entropy)
}

/// Binary search on the precision so the row's entropy matches
/// `log2(perplexity)`. Rows of all-zero distances fall back to uniform.
pub fn perplexity_calibration(sq_distances: &[f64], perplexity: f64) -> Result<Calibration> {
    let neighbors = sq_distances.len();
    if neighbors == 0 {
        return Err(Error::input("calibration needs at least one neighbor"));
    }
    if !(perplexity > 0.0) || perplexity >= (neighbors + 1) as f64 {
        return Err(Error::param(format!(
            "perplexity {perplexity} must be in (0, {})",
            neighbors + 1
        )));
    }
    if sq_distances.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::input("squared distances must be finite and nonnegative"));
    }
    let target = perplexity.log2();
    let d_min = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = sq_distances.iter().copied().fold(0.0, f64::max);
    if d_max == 0.0 {
        let p = vec![1.0 / neighbors as f64; neighbors];
        let entropy = (neighbors as f64).log2();
        return Ok(Calibration {
            beta: 0.0,
            sigma: f64::INFINITY,
            probabilities: p,
            entropy,
            converged: (entropy - target).abs() <= ENTROPY_TOLERANCE,
        });
    }

    let mut beta = 1.0 / d_max.max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let (mut p, mut entropy) = conditional(sq_distances, d_min, beta);
    let mut best = (beta, p.clone(), entropy);
    for _ in 0..MAX_BISECTIONS {
        let gap = entropy - target;
        if gap.abs() < (best.2 - target).abs() {
            best = (beta, p.clone(), entropy);
        }
        if gap.abs() <= ENTROPY_TOLERANCE {
            break;
        }
        // Entropy falls as precision rises.
        if gap > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (p, entropy) = conditional(sq_distances, d_min, beta);
    }
    if (entropy - target).abs() < (best.2 - target).abs() {
        best = (beta, p, entropy);
    }
    let (beta, probabilities, entropy) = best;
    Ok(Calibration {
        beta,
        sigma: (1.0 / (2.0 * beta)).sqrt(),
        probabilities,
        entropy,
        converged: (entropy - target).abs() <= ENTROPY_TOLERANCE,
    })
}

pub fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Symmetrized joint probabilities `(p_j|i + p_i|j) / 2N`, floored, plus the
/// per-row calibrations.
pub fn joint_probabilities(x: ArrayView2<f64>, perplexity: f64) -> Result<(Array2<f64>, Vec<Calibration>)> {
    let n = x.nrows();
    let d = squared_distances(x);
    let rows: Vec<Calibration> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[[i, j]]).collect();
            perplexity_calibration(&row, perplexity)
        })
        .collect::<Result<_>>()?;
    let mut conditional = Array2::<f64>::zeros((n, n));
    for (i, cal) in rows.iter().enumerate() {
        let mut k = 0;
        for j in 0..n {
            if j != i {
                conditional[[i, j]] = cal.probabilities[k];
                k += 1;
            }
        }
    }
    let mut p = Array2::<f64>::zeros((n, n));
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[[i, j]] = ((conditional[[i, j]] + conditional[[j, i]]) / denom).max(PROBABILITY_FLOOR);
            }
        }
    }
    Ok((p, rows))
}

/// Student-t kernel values `1 / (1 + |y_i - y_j|^2)` (zero diagonal) and their sum.
fn kernel(y: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let mut num = Array2::<f64>::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let k = 1.0 / (1.0 + s);
            num[[i, j]] = k;
            num[[j, i]] = k;
            z += 2.0 * k;
        }
    }
    (num, z)
}

/// `KL(P || Q)` over off-diagonal pairs, with `Q` floored.
pub fn kl_divergence(p: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let (num, z) = kernel(y);
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[[i, j]] > 0.0 {
                let q = (num[[i, j]] / z).max(PROBABILITY_FLOOR);
                kl += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
    }
    kl
}

/// `dKL/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)`.
/// Rows are computed independently and each sums over `j` in index order.
pub fn kl_gradient(p: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let (num, z) = kernel(y);
    let (n, k) = y.dim();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; k];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[[i, j]] / z;
                let w = 4.0 * (p[[i, j]] - q) * num[[i, j]];
                for (c, gc) in g.iter_mut().enumerate() {
                    *gc += w * (y[[i, c]] - y[[j, c]]);
                }
            }
            g
        })
        .collect();
    Array2::from_shape_fn((n, k), |(i, c)| rows[i][c])
}

/// Gradient descent on `KL(P || Q)` with momentum and per-coordinate gains.
pub fn tsne_embed(vectors: ArrayView2<f64>, params: &TsneParams) -> Result<ProjectionResult> {
    let (n, d) = vectors.dim();
    if d == 0 {
        return Err(Error::input("t-SNE needs at least one input dimension"));
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE input".into()));
    }
    let resolved = params.resolve(n)?;
    let (p, calibrations) = joint_probabilities(vectors, resolved.perplexity)?;
    let unconverged = calibrations.iter().filter(|c| !c.converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} of {n} rows did not reach the entropy tolerance; best effort kept");
    }

    let k = resolved.n_components;
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
    let normal = Normal::new(0.0, INIT_STDDEV).expect("valid stddev");
    let mut y = Array2::from_shape_simple_fn((n, k), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, k));
    let mut gains = Array2::<f64>::ones((n, k));
    let exaggerated = &p * resolved.early_exaggeration;
    let mut kl_trace = Vec::new();

    for iter in 0..resolved.n_iter {
        let early = iter < EXAGGERATION_ITERS;
        let momentum = if early { 0.5 } else { 0.8 };
        let target = if early { exaggerated.view() } else { p.view() };
        let grad = kl_gradient(target, y.view());
        for ((g, gain), u) in grad.iter().zip(gains.iter_mut()).zip(update.iter()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(MIN_GAIN)
            };
        }
        update.zip_mut_with(&(&grad * &gains), |u, &gg| {
            *u = momentum * *u - resolved.learning_rate * gg;
        });
        y += &update;
        for c in 0..k {
            let mean = y.column(c).sum() / n as f64;
            y.column_mut(c).mapv_inplace(|v| v - mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE coordinates at iteration {}", iter + 1)));
        }
        if (iter + 1) % 50 == 0 {
            kl_trace.push(KlPoint {
                iteration: iter + 1,
                kl: kl_divergence(p.view(), y.view()).max(0.0),
            });
        }
    }
    Ok(ProjectionResult {
        coordinates: y,
        kl_trace,
        params: resolved,
        unconverged_rows: unconverged,
    })
}
