//! Context-conditioned prediction of distribution parameters.
//!
//! A [`Predictor`] maps a [`ContextWindow`] (the target word plus `n` words
//! before and `m` after it) to two raw reals, which [`crate::conditional::constrain`]
//! turns into parameters of the selected family. The built-in
//! [`PredictorModel`] and the socket client [`RemotePredictor`] share this
//! interface.

mod mock;
mod model;
mod remote;
mod train;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditional::{constrain, DistFamily, DistParams};
use crate::corpus::FeatureKind;

pub use mock::{model_handler, MockServer, Reply, ServeHandler};
pub use model::ModelConfig;
pub use remote::{
    Handshake, ItemError, ProtocolRequest, ProtocolResponse, RemotePredictor, PROTOCOL_NAME,
    PROTOCOL_VERSION,
};
pub use train::{
    gradient_check, run_early_stopping, train, EarlyStopping, TrainConfig, TrainHistory,
};

/// Longest window any predictor accepts (`n + 1 + m`).
pub const MAX_WINDOW: usize = 11;
pub const UNK: usize = 0;
pub const PAD: usize = 1;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("window length {0} outside 1..={MAX_WINDOW}")]
    WindowLength(usize),
    #[error("window of length {len} has no position {n} (n={n}, m={m})")]
    WindowShape { len: usize, n: usize, m: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no {0} targets with values")]
    NoTargets(&'static str),
    #[error("family {family} cannot model value {value}")]
    IncompatibleFamily { family: DistFamily, value: f64 },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite validation loss after epoch {epoch}")]
    NonFiniteValidation { epoch: usize },
    #[error("transport: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol violation on line {line:?}: {message}")]
    Protocol { line: String, message: String },
    #[error("predictor rejected window {id}: [{code}] {message}")]
    Item {
        id: u64,
        code: String,
        message: String,
    },
    #[error("handshake refused: {0}")]
    Handshake(String),
}

/// Token-to-id map built from training text. Ids 0 and 1 are reserved for
/// unknown words and padding; real tokens start at 2 in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_sorted(r.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { tokens: v.tokens }
    }
}

impl Vocabulary {
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let set: std::collections::BTreeSet<&str> = tokens.into_iter().collect();
        Vocabulary::from_sorted(set.into_iter().map(str::to_owned).collect())
    }

    fn from_sorted(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    /// Number of ids including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(2)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }
}

/// The target word with `n` words of left and `m` words of right context.
/// Only tokens inside the window are representable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow<'a> {
    tokens: Vec<&'a str>,
    n: usize,
    m: usize,
}

impl<'a> ContextWindow<'a> {
    pub fn new(tokens: Vec<&'a str>, n: usize, m: usize) -> Result<Self, PredictError> {
        let len = tokens.len();
        if len == 0 || len > MAX_WINDOW {
            return Err(PredictError::WindowLength(len));
        }
        if n + 1 + m != len {
            return Err(PredictError::WindowShape { len, n, m });
        }
        Ok(ContextWindow { tokens, n, m })
    }

    /// Window around position `t` of `seq`, or `None` when the sequence does
    /// not hold `n` words before and `m` after it.
    pub fn around(seq: &'a [String], t: usize, n: usize, m: usize) -> Option<Self> {
        if t < n || t + m >= seq.len() || n + 1 + m > MAX_WINDOW {
            return None;
        }
        let tokens = seq[t - n..=t + m].iter().map(String::as_str).collect();
        Some(ContextWindow { tokens, n, m })
    }

    pub fn tokens(&self) -> &[&'a str] {
        &self.tokens
    }

    pub fn target_index(&self) -> usize {
        self.n
    }

    pub fn past(&self) -> usize {
        self.n
    }

    pub fn future(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A contiguous span of an utterance; every position in it is a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    /// `(n, m)` for each position of the span, in order.
    pub fn contexts(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len).map(move |i| (i, self.len - 1 - i))
    }
}

/// Draws a span length uniformly from `[min_len, min(max_len, utterance_len)]`
/// and then a start offset uniformly among the positions where it fits.
pub fn sample_span(
    utterance_len: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Span {
    assert!(
        utterance_len >= 1,
        "cannot sample a span from an empty utterance"
    );
    let hi = max_len.min(utterance_len).max(1);
    let lo = min_len.clamp(1, hi);
    let len = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=utterance_len - len);
    Span { start, len }
}

/// Anything that predicts raw distribution parameters for context windows.
pub trait Predictor: Sync {
    fn family(&self) -> DistFamily;

    /// Longest window the predictor was prepared for.
    fn max_window(&self) -> usize {
        MAX_WINDOW
    }

    /// Two unconstrained reals per window, in input order.
    fn predict_raw(&self, windows: &[ContextWindow<'_>]) -> Result<Vec<[f64; 2]>, PredictError>;

    fn predict(&self, windows: &[ContextWindow<'_>]) -> Result<Vec<DistParams>, PredictError> {
        let family = self.family();
        Ok(self
            .predict_raw(windows)?
            .into_iter()
            .map(|raw| constrain(raw, family))
            .collect())
    }
}

/// Trained built-in predictor. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub feature: FeatureKind,
    pub family: DistFamily,
    pub vocabulary: Vocabulary,
    pub config: ModelConfig,
    /// Longest span seen in training.
    pub max_window: usize,
    pub params: Vec<f64>,
    pub history: TrainHistory,
}

impl PredictorModel {
    fn layout(&self) -> model::Layout {
        model::Layout::new(self.vocabulary.len(), &self.config)
    }

    fn ids(&self, w: &ContextWindow<'_>) -> Vec<usize> {
        w.tokens().iter().map(|t| self.vocabulary.id(t)).collect()
    }

    /// Raw outputs for one window.
    pub fn predict_one_raw(&self, w: &ContextWindow<'_>) -> [f64; 2] {
        let layout = self.layout();
        model::forward_at(&self.params, &layout, &self.ids(w), w.target_index())
    }

    /// Raw outputs for arbitrary positions of a token sequence of length at
    /// most [`MAX_WINDOW`]; the whole sequence is the window.
    pub fn predict_positions(
        &self,
        tokens: &[&str],
        targets: &[usize],
    ) -> Result<Vec<[f64; 2]>, PredictError> {
        if tokens.is_empty() || tokens.len() > MAX_WINDOW {
            return Err(PredictError::WindowLength(tokens.len()));
        }
        let layout = self.layout();
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocabulary.id(t)).collect();
        targets
            .iter()
            .map(|&t| {
                if t >= ids.len() {
                    Err(PredictError::WindowShape {
                        len: ids.len(),
                        n: t,
                        m: 0,
                    })
                } else {
                    Ok(model::forward_at(&self.params, &layout, &ids, t))
                }
            })
            .collect()
    }
}

impl Predictor for PredictorModel {
    fn family(&self) -> DistFamily {
        self.family
    }

    fn max_window(&self) -> usize {
        self.max_window
    }

    fn predict_raw(&self, windows: &[ContextWindow<'_>]) -> Result<Vec<[f64; 2]>, PredictError> {
        use rayon::prelude::*;
        let layout = self.layout();
        Ok(windows
            .par_iter()
            .map(|w| model::forward_at(&self.params, &layout, &self.ids(w), w.target_index()))
            .collect())
    }
}
