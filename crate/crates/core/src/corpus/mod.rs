//! Word-level data model, the line-delimited corpus format and the derived
//! feature transforms (pause, per-syllable duration, relative prominence,
//! per-speaker z-scoring).

mod format;
mod transforms;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{
    load_corpus, load_corpus_with, load_manifest, manifest_path, save_corpus, LoadOptions,
    LoadReport, Manifest, MANIFEST_SCHEMA_VERSION,
};
pub use transforms::{
    compute_pause, count_syllables, feature_values, per_syllable_duration, relative_prominence,
    strip_punctuation, zscore_per_speaker, FeatureSeries, SeriesUtterance, SpeakerStats,
};

/// Minimum number of words an utterance must keep after normalization.
pub const MIN_UTTERANCE_WORDS: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: utterance `{utterance_id}` position {position}: {reason}")]
    InvalidRecord {
        line: usize,
        utterance_id: String,
        position: usize,
        reason: String,
    },
    #[error("utterance `{utterance_id}`: {reason}")]
    InvalidUtterance {
        utterance_id: String,
        reason: String,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("speaker `{speaker}` has zero variance for {feature}")]
    ZeroVariance {
        speaker: String,
        feature: FeatureKind,
    },
    #[error("speaker `{speaker}` has fewer than 2 values for {feature}")]
    TooFewValues {
        speaker: String,
        feature: FeatureKind,
    },
    #[error("{feature} is derived and cannot be {action}")]
    DerivedFeature {
        feature: FeatureKind,
        action: &'static str,
    },
    #[error("utterance `{utterance_id}` position {position}: missing {feature}")]
    MissingFeature {
        utterance_id: String,
        position: usize,
        feature: FeatureKind,
    },
    #[error("word `{token}` has {syllables} syllables; at least 1 is required")]
    Syllables { token: String, syllables: u32 },
    #[error("corpus is empty after filtering")]
    Empty,
}

/// The six per-word signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Pitch,
    Energy,
    Duration,
    Pause,
    AbsProminence,
    RelProminence,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Pitch,
        FeatureKind::Energy,
        FeatureKind::Duration,
        FeatureKind::Pause,
        FeatureKind::AbsProminence,
        FeatureKind::RelProminence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Pitch => "pitch",
            FeatureKind::Energy => "energy",
            FeatureKind::Duration => "duration",
            FeatureKind::Pause => "pause",
            FeatureKind::AbsProminence => "abs_prominence",
            FeatureKind::RelProminence => "rel_prominence",
        }
    }

    /// Kinds carried as raw values in the corpus file. The rest are computed
    /// from timing or from other features.
    pub fn is_stored(self) -> bool {
        matches!(
            self,
            FeatureKind::Pitch | FeatureKind::Energy | FeatureKind::AbsProminence
        )
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// One word occurrence with its alignment and raw signal values.
#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub token: String,
    pub utterance_id: String,
    pub speaker_id: String,
    pub position: usize,
    pub onset_s: f64,
    pub offset_s: f64,
    pub syllables: u32,
    pub features: BTreeMap<FeatureKind, f64>,
}

impl WordRecord {
    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    pub fn feature(&self, kind: FeatureKind) -> Option<f64> {
        self.features.get(&kind).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub words: Vec<WordRecord>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.token.as_str())
    }

    /// Checks the per-word and ordering invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::InvalidUtterance {
            utterance_id: self.utterance_id.clone(),
            reason,
        };
        let mut prev_onset = f64::NEG_INFINITY;
        for (i, w) in self.words.iter().enumerate() {
            if w.position != i {
                return Err(bad(format!("position {} found at index {i}", w.position)));
            }
            if w.utterance_id != self.utterance_id || w.speaker_id != self.speaker_id {
                return Err(bad(format!("word {i} carries mismatched ids")));
            }
            if !(w.onset_s >= 0.0) || !(w.offset_s > w.onset_s) {
                return Err(bad(format!(
                    "word {i} has onset {} and offset {}",
                    w.onset_s, w.offset_s
                )));
            }
            if w.onset_s < prev_onset {
                return Err(bad(format!("word {i} starts before its predecessor")));
            }
            if w.syllables < 1 {
                return Err(bad(format!("word {i} has no syllables")));
            }
            if w.token.is_empty() || strip_punctuation(&w.token) != w.token {
                return Err(bad(format!(
                    "word {i} token `{}` is not normalized",
                    w.token
                )));
            }
            prev_onset = w.onset_s;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(split: Split, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let corpus = Corpus { split, utterances };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(CorpusError::InvalidUtterance {
                    utterance_id: u.utterance_id.clone(),
                    reason: format!("duplicate id in {} split", self.split),
                });
            }
            u.validate()?;
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &WordRecord> {
        self.utterances.iter().flat_map(|u| u.words.iter())
    }
}
