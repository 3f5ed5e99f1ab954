//! Linear-Gaussian processes with known context dependence.
//!
//! A value at position `t` is `sum_k a_k * e(token[t + k]) + noise`, with
//! tokens drawn uniformly and independently and `k` ranging over
//! `-past..=future`. Lags that fall outside an utterance read hidden tokens
//! drawn the same way, so every position follows the same law and the
//! mutual information with any window has a closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::corpus::{
    Corpus, CorpusError, FeatureKind, FeatureSeries, Split, Utterance, WordRecord,
};
use crate::numeric::{compensated_sum, log_sum_exp, mean, population_std};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid process: {0}")]
    Invalid(String),
    #[error("enumerating {count} token combinations exceeds the limit of {limit}")]
    TooManyCombinations { count: f64, limit: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Serializable description of a process; the effect table is derived from
/// `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub vocab_size: usize,
    pub past: usize,
    pub future: usize,
    /// Weights for lags `-past..=future`, in that order.
    pub weights: Vec<f64>,
    pub noise_sd: f64,
    /// Inclusive range of utterance lengths in words.
    pub utterance_len: [usize; 2],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProcess {
    spec: ProcessSpec,
    effects: Vec<f64>,
}

/// Lag weights of a past/future window with comparable magnitudes that
/// decay gently away from the target.
pub fn comparable_weights(past: usize, future: usize) -> Vec<f64> {
    (-(past as i64)..=future as i64)
        .map(|k| 1.0 / (1.0 + 0.1 * k.unsigned_abs() as f64))
        .collect()
}

/// Noise standard deviation giving total mutual information `target_mi`
/// for lag weights `weights` and effect variance `var_e`.
pub fn noise_sd_for_mi(weights: &[f64], var_e: f64, target_mi: f64) -> f64 {
    let s: f64 = weights.iter().map(|a| a * a * var_e).sum();
    (s / (2.0 * target_mi).exp_m1()).sqrt()
}

impl SyntheticProcess {
    pub fn new(spec: ProcessSpec) -> Result<Self, SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::Invalid(m.to_owned()));
        if spec.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if spec.weights.len() != spec.past + spec.future + 1 {
            return bad("weights must cover lags -past..=future");
        }
        if spec.weights.iter().any(|w| !w.is_finite()) {
            return bad("weights must be finite");
        }
        if !(spec.noise_sd > 0.0 && spec.noise_sd.is_finite()) {
            return bad("noise_sd must be positive");
        }
        let [lo, hi] = spec.utterance_len;
        if lo < 1 || lo > hi {
            return bad("utterance_len must be a non-empty range of positive lengths");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let raw: Vec<f64> = (0..spec.vocab_size)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (mu, sd) = (mean(&raw), population_std(&raw));
        let effects = raw.iter().map(|e| (e - mu) / sd).collect();
        Ok(SyntheticProcess { spec, effects })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    /// Per-token effect values, standardized to mean 0 and variance 1.
    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    pub fn effect_variance(&self) -> f64 {
        population_std(&self.effects).powi(2)
    }

    /// Marginal standard deviation of the generated value.
    pub fn value_sd(&self) -> f64 {
        let var_e = self.effect_variance();
        let signal: f64 = self.spec.weights.iter().map(|a| a * a * var_e).sum();
        (signal + self.spec.noise_sd.powi(2)).sqrt()
    }

    pub fn token_name(id: usize) -> String {
        format!("w{id:04}")
    }

    fn lags(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let past = self.spec.past as i64;
        self.spec
            .weights
            .iter()
            .enumerate()
            .map(move |(i, &a)| (i as i64 - past, a))
    }

    fn covered(n: usize, m: usize, lag: i64) -> bool {
        lag >= -(n as i64) && lag <= m as i64
    }

    /// Token ids and values of one utterance of `len` words.
    fn draw_utterance(
        &self,
        len: usize,
        rng: &mut ChaCha8Rng,
        channels: usize,
    ) -> (Vec<usize>, Vec<Vec<f64>>) {
        let (p, f) = (self.spec.past, self.spec.future);
        let v = self.spec.vocab_size;
        let extended: Vec<usize> = (0..p + len + f).map(|_| rng.random_range(0..v)).collect();
        let noise = Normal::new(0.0, self.spec.noise_sd).expect("positive sd");
        let mut values = vec![Vec::with_capacity(len); channels];
        for t in 0..len {
            let signal: f64 = self
                .spec
                .weights
                .iter()
                .enumerate()
                .map(|(i, a)| a * self.effects[extended[t + i]])
                .sum();
            for ch in values.iter_mut() {
                ch.push(signal + noise.sample(rng));
            }
        }
        (extended[p..p + len].to_vec(), values)
    }

    /// Token sequences with values, without the corpus record layer.
    pub fn series(&self, feature: FeatureKind, num_utterances: usize, seed: u64) -> FeatureSeries {
        let utterances = (0..num_utterances)
            .into_par_iter()
            .map(|i| {
                let mut rng = utterance_rng(seed, i);
                let [lo, hi] = self.spec.utterance_len;
                let len = rng.random_range(lo..=hi);
                let (ids, mut vals) = self.draw_utterance(len, &mut rng, 1);
                crate::corpus::SeriesUtterance {
                    tokens: ids.into_iter().map(Self::token_name).collect(),
                    values: vals.remove(0).into_iter().map(Some).collect(),
                }
            })
            .collect();
        FeatureSeries {
            feature,
            utterances,
        }
    }

    /// A corpus in which every feature is an independent draw of the
    /// process over shared tokens. Stored features hold the value itself;
    /// per-syllable duration and pause hold monotone transforms of it, which
    /// leave mutual information unchanged. Relative prominence follows from
    /// absolute prominence as usual.
    pub fn generate(
        &self,
        split: Split,
        num_utterances: usize,
        seed: u64,
    ) -> Result<Corpus, SyntheticError> {
        if num_utterances == 0 {
            return Err(SyntheticError::Invalid(
                "num_utterances must be positive".into(),
            ));
        }
        let utterances = (0..num_utterances)
            .into_par_iter()
            .map(|i| {
                let mut rng = utterance_rng(seed, i);
                let [lo, hi] = self.spec.utterance_len;
                let len = rng.random_range(lo..=hi);
                let (ids, ch) = self.draw_utterance(len, &mut rng, 5);
                build_utterance(split, i, &ids, &ch, self.value_sd())
            })
            .collect();
        Ok(Corpus::new(split, utterances)?)
    }

    /// Closed-form mutual information between the value and a window of `n`
    /// past and `m` future words.
    pub fn analytic_mi(&self, n: usize, m: usize) -> f64 {
        let var_e = self.effect_variance();
        let (mut cov, mut unc) = (Vec::new(), Vec::new());
        for (lag, a) in self.lags() {
            let s = a * a * var_e;
            if Self::covered(n, m, lag) {
                cov.push(s);
            } else {
                unc.push(s);
            }
        }
        let s_cov = compensated_sum(cov);
        let s_unc = compensated_sum(unc);
        let noise = self.spec.noise_sd.powi(2);
        0.5 * ((s_cov + s_unc + noise) / (s_unc + noise)).ln()
    }

    /// All sums `sum_k a_k e(v_k)` over token assignments to the given
    /// nonzero-weight lags, one entry per assignment.
    fn mixture_means(&self, lags: &[f64], limit: usize) -> Result<Vec<f64>, SyntheticError> {
        let v = self.spec.vocab_size;
        let count = (v as f64).powi(lags.len() as i32);
        if count > limit as f64 {
            return Err(SyntheticError::TooManyCombinations { count, limit });
        }
        let mut means = vec![0.0];
        for &a in lags {
            means = means
                .iter()
                .flat_map(|&base| self.effects.iter().map(move |e| base + a * e))
                .collect();
        }
        Ok(means)
    }

    fn split_lags(&self, n: usize, m: usize) -> (Vec<(i64, f64)>, Vec<f64>) {
        let mut cov = Vec::new();
        let mut unc = Vec::new();
        for (lag, a) in self.lags().filter(|(_, a)| *a != 0.0) {
            if Self::covered(n, m, lag) {
                cov.push((lag, a));
            } else {
                unc.push(a);
            }
        }
        (cov, unc)
    }

    /// Monte Carlo estimate of the same quantity as [`Self::analytic_mi`]
    /// using exact mixture densities rather than the Gaussian closed form.
    pub fn monte_carlo_mi(
        &self,
        n: usize,
        m: usize,
        samples: usize,
        seed: u64,
    ) -> Result<f64, SyntheticError> {
        const LIMIT: usize = 1 << 20;
        let (cov, unc) = self.split_lags(n, m);
        let all: Vec<f64> = cov
            .iter()
            .map(|&(_, a)| a)
            .chain(unc.iter().copied())
            .collect();
        let marginal = self.mixture_means(&all, LIMIT)?;
        let residual = self.mixture_means(&unc, LIMIT)?;
        let sd = self.spec.noise_sd;
        let v = self.spec.vocab_size;
        let chunks = 64usize;
        let per_chunk = samples.div_ceil(chunks);
        let diffs: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = utterance_rng(seed, c);
                let mut out = Vec::with_capacity(per_chunk);
                let mut buf = vec![0.0; marginal.len().max(residual.len())];
                for _ in 0..per_chunk.min(samples.saturating_sub(c * per_chunk)) {
                    let known: f64 = cov
                        .iter()
                        .map(|&(_, a)| a * self.effects[rng.random_range(0..v)])
                        .sum();
                    let hidden: f64 = unc
                        .iter()
                        .map(|&a| a * self.effects[rng.random_range(0..v)])
                        .sum();
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let y = known + hidden + sd * eps;
                    let lp_y = mixture_logpdf(&marginal, y, sd, &mut buf);
                    let lp_cond = mixture_logpdf(&residual, y - known, sd, &mut buf);
                    out.push(lp_cond - lp_y);
                }
                out
            })
            .collect();
        let flat: Vec<f64> = diffs.into_iter().flatten().collect();
        Ok(mean(&flat))
    }

    /// Mutual information by enumerating every window and integrating the
    /// mixture densities numerically. Practical for small vocabularies.
    pub fn enumerated_mi(&self, n: usize, m: usize) -> Result<f64, SyntheticError> {
        const LIMIT: usize = 1 << 14;
        let (cov, unc) = self.split_lags(n, m);
        let all: Vec<f64> = cov
            .iter()
            .map(|&(_, a)| a)
            .chain(unc.iter().copied())
            .collect();
        let marginal = self.mixture_means(&all, LIMIT)?;
        let residual = self.mixture_means(&unc, LIMIT)?;
        let sd = self.spec.noise_sd;
        let h_y = mixture_entropy(&marginal, sd);
        // every window shifts the same residual mixture, and shifting leaves
        // entropy unchanged
        let h_cond = mixture_entropy(&residual, sd);
        Ok(h_y - h_cond)
    }
}

fn utterance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn mixture_logpdf(means: &[f64], y: f64, sd: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    let norm = -0.5 * LN_2PI - sd.ln() - (means.len() as f64).ln();
    buf.extend(means.iter().map(|mu| {
        let z = (y - mu) / sd;
        -0.5 * z * z
    }));
    norm + log_sum_exp(buf)
}

/// Differential entropy of an equal-weight Gaussian mixture by composite
/// Simpson integration.
fn mixture_entropy(means: &[f64], sd: f64) -> f64 {
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * sd;
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sd;
    let steps = (((hi - lo) / sd) * 200.0).ceil() as usize * 2;
    let h = (hi - lo) / steps as f64;
    let mut buf = Vec::with_capacity(means.len());
    let terms: Vec<f64> = (0..=steps)
        .map(|i| {
            let y = lo + i as f64 * h;
            let lp = mixture_logpdf(means, y, sd, &mut buf);
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            -w * lp.exp() * lp
        })
        .collect();
    compensated_sum(terms) * h / 3.0
}

fn build_utterance(
    split: Split,
    index: usize,
    ids: &[usize],
    ch: &[Vec<f64>],
    sd: f64,
) -> Utterance {
    let utterance_id = format!("{}-{index:06}", split.name());
    let speaker_id = "synthetic".to_owned();
    let mut words = Vec::with_capacity(ids.len());
    let mut clock = 0.0;
    for (pos, &id) in ids.iter().enumerate() {
        let duration = 0.25 * (0.25 * ch[3][pos] / sd).exp();
        let pause = 0.05 * (0.5 * ch[4][pos] / sd).exp();
        let onset_s = clock;
        let offset_s = onset_s + duration;
        clock = offset_s + pause;
        let features = BTreeMap::from([
            (FeatureKind::Pitch, ch[0][pos]),
            (FeatureKind::Energy, ch[1][pos]),
            (FeatureKind::AbsProminence, ch[2][pos]),
        ]);
        words.push(WordRecord {
            token: SyntheticProcess::token_name(id),
            utterance_id: utterance_id.clone(),
            speaker_id: speaker_id.clone(),
            position: pos,
            onset_s,
            offset_s,
            syllables: 1,
            features,
        });
    }
    Utterance {
        utterance_id,
        speaker_id,
        words,
    }
}

/// Randomly permutes values across all positions, destroying any relation
/// to the tokens while keeping the marginal distribution.
pub fn shuffle_values(series: &FeatureSeries, seed: u64) -> FeatureSeries {
    use rand::seq::SliceRandom;
    let mut values = series.values();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = values.into_iter();
    let utterances = series
        .utterances
        .iter()
        .map(|u| crate::corpus::SeriesUtterance {
            tokens: u.tokens.clone(),
            values: u.values.iter().map(|v| v.and_then(|_| it.next())).collect(),
        })
        .collect();
    FeatureSeries {
        feature: series.feature,
        utterances,
    }
}
