//! Parametric conditional families and their log-densities.
//!
//! Predictors emit two unconstrained reals per position; [`constrain`] maps
//! them onto valid parameters so every predictor shares one code path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::numeric::{compensated_sum, sigmoid, softplus};

/// Floor added to every positivity-constrained parameter.
pub const SCALE_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("{family} is undefined at y = {y}")]
    OutsideSupport { family: DistFamily, y: f64 },
    #[error("length mismatch: {params} parameter sets for {values} values")]
    LengthMismatch { params: usize, values: usize },
    #[error("no candidate family remains")]
    NoCandidates,
    #[error("invalid {family} parameters ({p1}, {p2})")]
    InvalidParams {
        family: DistFamily,
        p1: f64,
        p2: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistFamily {
    Gaussian,
    Laplace,
    Gamma,
}

impl DistFamily {
    /// Declaration order is the tie-breaking order.
    pub const ALL: [DistFamily; 3] = [DistFamily::Gaussian, DistFamily::Laplace, DistFamily::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            DistFamily::Gaussian => "gaussian",
            DistFamily::Laplace => "laplace",
            DistFamily::Gamma => "gamma",
        }
    }

    pub fn supports(self, y: f64) -> bool {
        match self {
            DistFamily::Gamma => y > 0.0,
            _ => y.is_finite(),
        }
    }
}

impl fmt::Display for DistFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family `{s}`"))
    }
}

/// Gaussian (mean, stddev), Laplace (location, scale) or Gamma (shape, rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub family: DistFamily,
    pub p1: f64,
    pub p2: f64,
}

impl DistParams {
    pub fn new(family: DistFamily, p1: f64, p2: f64) -> Result<Self, DistError> {
        let ok = p2 > 0.0
            && p2.is_finite()
            && p1.is_finite()
            && (family != DistFamily::Gamma || p1 > 0.0);
        if !ok {
            return Err(DistError::InvalidParams { family, p1, p2 });
        }
        Ok(DistParams { family, p1, p2 })
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            DistFamily::Gaussian | DistFamily::Laplace => self.p1,
            DistFamily::Gamma => self.p1 / self.p2,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            DistFamily::Gaussian => self.p2 * self.p2,
            DistFamily::Laplace => 2.0 * self.p2 * self.p2,
            DistFamily::Gamma => self.p1 / (self.p2 * self.p2),
        }
    }
}

/// Maps two unconstrained reals onto valid parameters with
/// `x -> ln(1 + e^x) + 1e-6`: always on the second parameter, and on the
/// first for Gamma.
pub fn constrain(raw: [f64; 2], family: DistFamily) -> DistParams {
    let pos = |x: f64| softplus(x) + SCALE_FLOOR;
    let p1 = match family {
        DistFamily::Gamma => pos(raw[0]),
        _ => raw[0],
    };
    DistParams {
        family,
        p1,
        p2: pos(raw[1]),
    }
}

pub fn logpdf(params: &DistParams, y: f64) -> Result<f64, DistError> {
    if !params.family.supports(y) {
        return Err(DistError::OutsideSupport {
            family: params.family,
            y,
        });
    }
    let (a, b) = (params.p1, params.p2);
    Ok(match params.family {
        DistFamily::Gaussian => {
            let z = (y - a) / b;
            -LN_SQRT_2PI - b.ln() - 0.5 * z * z
        }
        DistFamily::Laplace => -(2.0 * b).ln() - (y - a).abs() / b,
        DistFamily::Gamma => a * b.ln() - ln_gamma(a) + (a - 1.0) * y.ln() - b * y,
    })
}

/// Negative log-density and its gradient with respect to the raw
/// (pre-[`constrain`]) outputs.
pub fn nll_and_raw_grad(
    raw: [f64; 2],
    family: DistFamily,
    y: f64,
) -> Result<(f64, [f64; 2]), DistError> {
    let params = constrain(raw, family);
    let nll = -logpdf(&params, y)?;
    let (a, b) = (params.p1, params.p2);
    let db_draw = sigmoid(raw[1]);
    let grad = match family {
        DistFamily::Gaussian => {
            let r = y - a;
            let d_a = -r / (b * b);
            let d_b = 1.0 / b - r * r / (b * b * b);
            [d_a, d_b * db_draw]
        }
        DistFamily::Laplace => {
            let r = y - a;
            let d_a = -r.signum() / b;
            let d_b = 1.0 / b - r.abs() / (b * b);
            [d_a, d_b * db_draw]
        }
        DistFamily::Gamma => {
            let d_a = -b.ln() + digamma(a) - y.ln();
            let d_b = -a / b + y;
            [d_a * sigmoid(raw[0]), d_b * db_draw]
        }
    };
    Ok((nll, grad))
}

pub fn mean_nll(params_seq: &[DistParams], values: &[f64]) -> Result<f64, DistError> {
    if params_seq.len() != values.len() {
        return Err(DistError::LengthMismatch {
            params: params_seq.len(),
            values: values.len(),
        });
    }
    let nll = params_seq
        .iter()
        .zip(values)
        .map(|(p, &y)| logpdf(p, y).map(|l| -l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compensated_sum(nll) / values.len() as f64)
}

/// Families that can model `values`: Gamma is dropped when any value is
/// non-positive.
pub fn compatible_families(requested: &[DistFamily], values: &[f64]) -> Vec<DistFamily> {
    let positive = values.iter().all(|&v| v > 0.0);
    requested
        .iter()
        .copied()
        .filter(|f| *f != DistFamily::Gamma || positive)
        .collect()
}

/// Family with the lowest validation cross-entropy. Candidates incompatible
/// with `validation_values` are excluded first; ties resolve in the order
/// Gaussian, Laplace, Gamma.
pub fn select_family(
    scores: &[(DistFamily, f64)],
    validation_values: &[f64],
) -> Result<DistFamily, DistError> {
    let requested: Vec<DistFamily> = scores.iter().map(|(f, _)| *f).collect();
    let allowed = compatible_families(&requested, validation_values);
    let mut best: Option<(DistFamily, f64)> = None;
    for family in DistFamily::ALL {
        if !allowed.contains(&family) {
            continue;
        }
        for &(f, ce) in scores {
            if f != family || ce.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| ce < b) {
                best = Some((family, ce));
            }
        }
    }
    best.map(|(f, _)| f).ok_or(DistError::NoCandidates)
}
