//! Unconditional density model: an equal-weight Gaussian kernel density over
//! training values, with the shared bandwidth chosen by validation likelihood,
//! and the cross-entropy estimate of differential entropy it induces.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, log_space, mean, sample_std, sem};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Kernels whose log-weight falls this far below the nearest kernel's are
/// skipped; their total contribution is below 1e-12 relative for any
/// realistic number of centers.
const LOG_WEIGHT_CUTOFF: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("bandwidth candidate {0} is not a positive finite number")]
    InvalidBandwidth(f64),
    #[error("{0} sample is empty")]
    EmptySample(&'static str),
    #[error("{0} sample contains non-finite values")]
    NonFinite(&'static str),
    #[error("no bandwidth candidate yields a finite validation likelihood")]
    NoFiniteLikelihood,
}

/// Record of a uniform subsample of kernel centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsample {
    pub original: usize,
    pub kept: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    /// Sorted kernel centers.
    centers: Vec<f64>,
    bandwidth: f64,
    #[serde(default)]
    subsample: Option<Subsample>,
}

impl KdeModel {
    pub fn new(mut centers: Vec<f64>, bandwidth: f64) -> Result<Self, DensityError> {
        if centers.is_empty() {
            return Err(DensityError::EmptySample("center"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(DensityError::NonFinite("center"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(DensityError::InvalidBandwidth(bandwidth));
        }
        centers.sort_by(f64::total_cmp);
        Ok(KdeModel {
            centers,
            bandwidth,
            subsample: None,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn subsample(&self) -> Option<Subsample> {
        self.subsample
    }

    fn with_bandwidth(&self, bandwidth: f64) -> KdeModel {
        KdeModel {
            centers: self.centers.clone(),
            bandwidth,
            subsample: self.subsample,
        }
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        kde_logpdf_at(&self.centers, self.bandwidth, y)
    }
}

fn kde_logpdf_at(centers: &[f64], bw: f64, y: f64) -> f64 {
    let n = centers.len();
    let idx = centers.partition_point(|&c| c < y);
    let mut d_min = f64::INFINITY;
    if idx < n {
        d_min = d_min.min(centers[idx] - y);
    }
    if idx > 0 {
        d_min = d_min.min(y - centers[idx - 1]);
    }
    let radius = (d_min * d_min + 2.0 * bw * bw * LOG_WEIGHT_CUTOFF).sqrt();
    let lo = centers.partition_point(|&c| c < y - radius);
    let hi = centers.partition_point(|&c| c <= y + radius);
    let inv = 1.0 / (2.0 * bw * bw);
    let max_term = -(d_min * d_min) * inv;
    let s: f64 = centers[lo..hi]
        .iter()
        .map(|&c| {
            let d = y - c;
            (-(d * d) * inv - max_term).exp()
        })
        .sum();
    max_term + s.ln() - (n as f64).ln() - bw.ln() - LN_SQRT_2PI
}

/// Log density of the equal-weight Gaussian mixture at `y`.
pub fn kde_logpdf(m: &KdeModel, y: f64) -> f64 {
    m.logpdf(y)
}

/// `count` log-spaced candidates in `[1e-3, 1]` times the sample standard
/// deviation of `train`.
pub fn default_bandwidth_grid(train: &[f64], count: usize) -> Vec<f64> {
    let sd = sample_std(train);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    log_space(1e-3, 1.0, count)
        .into_iter()
        .map(|b| b * sd)
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct KdeOptions {
    /// Uniformly subsample the centers down to this many, if exceeded.
    pub max_centers: Option<usize>,
    pub seed: u64,
}

/// Selected model plus the validation score of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeFit {
    pub model: KdeModel,
    pub scores: Vec<(f64, f64)>,
}

pub fn fit_kde(train: &[f64], val: &[f64], grid: &[f64]) -> Result<KdeModel, DensityError> {
    fit_kde_with(train, val, grid, &KdeOptions::default()).map(|f| f.model)
}

/// Picks the bandwidth with the highest mean validation log-likelihood;
/// ties go to the larger bandwidth.
pub fn fit_kde_with(
    train: &[f64],
    val: &[f64],
    grid: &[f64],
    options: &KdeOptions,
) -> Result<KdeFit, DensityError> {
    if grid.is_empty() {
        return Err(DensityError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(DensityError::InvalidBandwidth(bad));
    }
    if val.is_empty() {
        return Err(DensityError::EmptySample("validation"));
    }
    if val.iter().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFinite("validation"));
    }
    let mut base = KdeModel::new(train.to_vec(), grid[0])?;
    if let Some(max) = options.max_centers {
        if train.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut idx = sample(&mut rng, train.len(), max).into_vec();
            idx.sort_unstable();
            let mut centers: Vec<f64> = idx.into_iter().map(|i| train[i]).collect();
            centers.sort_by(f64::total_cmp);
            base.centers = centers;
            base.subsample = Some(Subsample {
                original: train.len(),
                kept: max,
                seed: options.seed,
            });
        }
    }

    let scores: Vec<(f64, f64)> = grid
        .iter()
        .map(|&bw| {
            let per_sample: Vec<f64> = val
                .par_iter()
                .map(|&y| kde_logpdf_at(&base.centers, bw, y))
                .collect();
            (bw, compensated_sum(per_sample) / val.len() as f64)
        })
        .collect();
    let bw = select_bandwidth(&scores).ok_or(DensityError::NoFiniteLikelihood)?;
    Ok(KdeFit {
        model: base.with_bandwidth(bw),
        scores,
    })
}

/// Argmax of the validation score over `(bandwidth, score)` pairs, preferring
/// the larger bandwidth on ties. Non-finite scores never win.
fn select_bandwidth(scores: &[(f64, f64)]) -> Option<f64> {
    scores
        .iter()
        .filter(|(_, ll)| ll.is_finite())
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 > best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(bw, _)| bw)
}

/// Cross-entropy estimate in nats with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub sem: f64,
    pub n: usize,
}

impl EntropyEstimate {
    /// Mean and standard error of per-sample negative log-likelihoods.
    pub fn from_nll(nll: &[f64]) -> Option<Self> {
        if nll.is_empty() {
            return None;
        }
        Some(EntropyEstimate {
            value: mean(nll),
            sem: sem(nll),
            n: nll.len(),
        })
    }
}

/// Per-sample `-log p(y)` under the model, in input order.
pub fn kde_nll(m: &KdeModel, test: &[f64]) -> Vec<f64> {
    test.par_iter().map(|&y| -m.logpdf(y)).collect()
}

pub fn estimate_entropy(m: &KdeModel, test: &[f64]) -> Result<EntropyEstimate, DensityError> {
    if test.iter().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFinite("test"));
    }
    EntropyEstimate::from_nll(&kde_nll(m, test)).ok_or(DensityError::EmptySample("test"))
}
