use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::{Corpus, CorpusError, FeatureKind, Utterance, WordRecord};
use crate::numeric::{mean, population_std};

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}']").expect("valid punctuation class"))
}

/// Removes every Unicode punctuation code point (general category `P*`, which
/// includes the apostrophe) and lowercases the rest. An empty result means the
/// token should be dropped.
pub fn strip_punctuation(raw_token: &str) -> String {
    punctuation().replace_all(raw_token, "").to_lowercase()
}

/// Fallback syllable count: maximal runs of vowel letters, at least one.
pub fn count_syllables(token: &str) -> u32 {
    let mut groups = 0u32;
    let mut in_vowel = false;
    for c in token.chars() {
        let vowel = matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
        if vowel && !in_vowel {
            groups += 1;
        }
        in_vowel = vowel;
    }
    groups.max(1)
}

/// Gap between each word's offset and the next word's onset. The final word
/// has no successor and yields `None`; overlaps clamp to zero.
pub fn compute_pause(u: &Utterance) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(u.words.len());
    for pair in u.words.windows(2) {
        let gap = pair[1].onset_s - pair[0].offset_s;
        if gap < 0.0 {
            log::warn!(
                "utterance `{}` position {}: negative pause {gap:.4}s clamped to 0",
                u.utterance_id,
                pair[0].position
            );
        }
        out.push(Some(gap.max(0.0)));
    }
    if !u.words.is_empty() {
        out.push(None);
    }
    out
}

pub fn per_syllable_duration(w: &WordRecord) -> Result<f64, CorpusError> {
    if w.syllables < 1 {
        return Err(CorpusError::Syllables {
            token: w.token.clone(),
            syllables: w.syllables,
        });
    }
    Ok(w.duration_s() / w.syllables as f64)
}

/// Absolute prominence minus the mean of up to three preceding words. The
/// first word has no predecessors and yields `None`.
pub fn relative_prominence(u: &Utterance) -> Result<Vec<Option<f64>>, CorpusError> {
    let abs = u
        .words
        .iter()
        .map(|w| {
            w.feature(FeatureKind::AbsProminence)
                .ok_or_else(|| CorpusError::MissingFeature {
                    utterance_id: u.utterance_id.clone(),
                    position: w.position,
                    feature: FeatureKind::AbsProminence,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..abs.len())
        .map(|i| {
            if i == 0 {
                return None;
            }
            let prev = &abs[i.saturating_sub(3)..i];
            Some(abs[i] - prev.iter().sum::<f64>() / prev.len() as f64)
        })
        .collect())
}

/// Per-word target values of one feature; `None` marks words that carry no
/// sample for it.
pub fn feature_values(u: &Utterance, kind: FeatureKind) -> Result<Vec<Option<f64>>, CorpusError> {
    match kind {
        FeatureKind::Pitch | FeatureKind::Energy | FeatureKind::AbsProminence => {
            Ok(u.words.iter().map(|w| w.feature(kind)).collect())
        }
        FeatureKind::Duration => u
            .words
            .iter()
            .map(|w| per_syllable_duration(w).map(Some))
            .collect(),
        FeatureKind::Pause => Ok(compute_pause(u)),
        FeatureKind::RelProminence => relative_prominence(u),
    }
}

/// Mean and population standard deviation per speaker for one stored feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStats {
    pub feature: FeatureKind,
    pub stats: BTreeMap<String, (f64, f64)>,
}

fn speaker_values(c: &Corpus, kind: FeatureKind) -> BTreeMap<&str, Vec<f64>> {
    let mut by_speaker: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for u in &c.utterances {
        let vals = by_speaker.entry(u.speaker_id.as_str()).or_default();
        vals.extend(u.words.iter().filter_map(|w| w.feature(kind)));
    }
    by_speaker
}

fn stats_for(speaker: &str, kind: FeatureKind, vals: &[f64]) -> Result<(f64, f64), CorpusError> {
    if vals.len() < 2 {
        return Err(CorpusError::TooFewValues {
            speaker: speaker.to_string(),
            feature: kind,
        });
    }
    let sd = population_std(vals);
    if !(sd > 0.0) {
        return Err(CorpusError::ZeroVariance {
            speaker: speaker.to_string(),
            feature: kind,
        });
    }
    Ok((mean(vals), sd))
}

impl SpeakerStats {
    pub fn fit(c: &Corpus, kind: FeatureKind) -> Result<Self, CorpusError> {
        if !kind.is_stored() {
            return Err(CorpusError::DerivedFeature {
                feature: kind,
                action: "z-scored",
            });
        }
        let mut stats = BTreeMap::new();
        for (speaker, vals) in speaker_values(c, kind) {
            if vals.is_empty() {
                continue;
            }
            stats.insert(speaker.to_string(), stats_for(speaker, kind, &vals)?);
        }
        Ok(SpeakerStats {
            feature: kind,
            stats,
        })
    }

    /// Normalizes `c` with these statistics. Speakers unseen at fit time fall
    /// back to statistics of their own values in `c`.
    pub fn apply(&self, c: &Corpus) -> Result<Corpus, CorpusError> {
        let kind = self.feature;
        let mut fallback = BTreeMap::new();
        for (speaker, vals) in speaker_values(c, kind) {
            if !self.stats.contains_key(speaker) && !vals.is_empty() {
                log::warn!(
                    "speaker `{speaker}` absent from fitting split; using own {kind} statistics"
                );
                fallback.insert(speaker.to_string(), stats_for(speaker, kind, &vals)?);
            }
        }
        let mut out = c.clone();
        for u in &mut out.utterances {
            let Some(&(mu, sd)) = self
                .stats
                .get(&u.speaker_id)
                .or_else(|| fallback.get(&u.speaker_id))
            else {
                continue;
            };
            for w in &mut u.words {
                if let Some(v) = w.features.get_mut(&kind) {
                    *v = (*v - mu) / sd;
                }
            }
        }
        Ok(out)
    }
}

/// Z-scores one stored feature per speaker using the corpus's own statistics.
pub fn zscore_per_speaker(c: &Corpus, kind: FeatureKind) -> Result<Corpus, CorpusError> {
    SpeakerStats::fit(c, kind)?.apply(c)
}

/// Token sequence and per-word target values of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesUtterance {
    pub tokens: Vec<String>,
    pub values: Vec<Option<f64>>,
}

/// One feature's view of a corpus: what the estimators consume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub feature: FeatureKind,
    pub utterances: Vec<SeriesUtterance>,
}

impl FeatureSeries {
    pub fn from_corpus(c: &Corpus, kind: FeatureKind) -> Result<Self, CorpusError> {
        let utterances = c
            .utterances
            .iter()
            .map(|u| {
                Ok(SeriesUtterance {
                    tokens: u.words.iter().map(|w| w.token.clone()).collect(),
                    values: feature_values(u, kind)?,
                })
            })
            .collect::<Result<_, CorpusError>>()?;
        Ok(FeatureSeries {
            feature: kind,
            utterances,
        })
    }

    /// All present sample values in corpus order.
    pub fn values(&self) -> Vec<f64> {
        self.utterances
            .iter()
            .flat_map(|u| u.values.iter().flatten().copied())
            .collect()
    }

    pub fn sample_count(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.values.iter().filter(|v| v.is_some()).count())
            .sum()
    }

    pub fn word_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }
}
