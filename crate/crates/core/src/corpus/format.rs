use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use super::{
    count_syllables, strip_punctuation, Corpus, CorpusError, FeatureKind, Split, Utterance,
    WordRecord, MIN_UTTERANCE_WORDS,
};
use crate::numeric::fmt_exact;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Sidecar listing which utterances belong to which split, plus the
/// transforms already applied to the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub splits: BTreeMap<Split, Vec<String>>,
    #[serde(default)]
    pub transforms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl Manifest {
    pub fn split_of(&self) -> HashMap<&str, Split> {
        self.splits
            .iter()
            .flat_map(|(s, ids)| ids.iter().map(move |id| (id.as_str(), *s)))
            .collect()
    }
}

/// `data/corpus.jsonl` -> `data/corpus.manifest.json`.
pub fn manifest_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("manifest.json")
}

pub fn load_manifest(corpus_path: &Path) -> Result<Option<Manifest>, CorpusError> {
    let path = manifest_path(corpus_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(CorpusError::Manifest {
            path,
            message: format!("unsupported schema version {}", manifest.schema_version),
        });
    }
    Ok(Some(manifest))
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Fill null syllable counts with [`count_syllables`] instead of failing.
    pub infer_syllables: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    /// Utterances dropped for having fewer than three words, with their length.
    pub dropped_utterances: Vec<(String, usize)>,
    /// Words removed because their token was punctuation only.
    pub dropped_tokens: usize,
    /// Words whose onset precedes the previous word's offset.
    pub overlapping_words: usize,
}

fn nullable<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<T>, D::Error> {
    Option::<T>::deserialize(d)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    utterance_id: String,
    speaker_id: String,
    position: usize,
    token: String,
    onset_s: f64,
    offset_s: f64,
    #[serde(deserialize_with = "nullable")]
    syllables: Option<u32>,
    #[serde(deserialize_with = "nullable")]
    pitch: Option<f64>,
    #[serde(deserialize_with = "nullable")]
    energy: Option<f64>,
    #[serde(deserialize_with = "nullable")]
    prominence: Option<f64>,
}

const STORED_FIELDS: [(&str, FeatureKind); 3] = [
    ("pitch", FeatureKind::Pitch),
    ("energy", FeatureKind::Energy),
    ("prominence", FeatureKind::AbsProminence),
];

pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, split, &LoadOptions::default()).map(|(c, _)| c)
}

/// Reads one split from a line-delimited corpus file. Without a sidecar
/// manifest every utterance in the file is assigned to `split`.
pub fn load_corpus_with(
    path: &Path,
    split: Split,
    options: &LoadOptions,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let manifest = load_manifest(path)?;
    let membership = manifest.as_ref().map(Manifest::split_of);

    let file = fs::File::open(path).map_err(io_err)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, RawRecord)>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("missing field `") {
                Some(rest) => CorpusError::MissingField {
                    line: line_no,
                    field: rest.split('`').next().unwrap_or_default().to_string(),
                },
                None => CorpusError::Malformed {
                    line: line_no,
                    message: msg,
                },
            }
        })?;
        check_record(line_no, &rec, options)?;
        if let Some(m) = &membership {
            match m.get(rec.utterance_id.as_str()) {
                Some(s) if *s == split => {}
                _ => continue,
            }
        }
        if !groups.contains_key(&rec.utterance_id) {
            order.push(rec.utterance_id.clone());
        }
        groups
            .entry(rec.utterance_id.clone())
            .or_default()
            .push((line_no, rec));
    }

    let mut report = LoadReport::default();
    let mut utterances = Vec::with_capacity(order.len());
    for id in order {
        let records = groups.remove(&id).unwrap_or_default();
        if let Some(u) = build_utterance(id, records, options, &mut report)? {
            utterances.push(u);
        }
    }
    for (id, len) in &report.dropped_utterances {
        log::warn!("dropping utterance `{id}`: {len} words after normalization");
    }
    Ok((Corpus::new(split, utterances)?, report))
}

fn check_record(line: usize, rec: &RawRecord, options: &LoadOptions) -> Result<(), CorpusError> {
    let bad = |reason: String| CorpusError::InvalidRecord {
        line,
        utterance_id: rec.utterance_id.clone(),
        position: rec.position,
        reason,
    };
    if !rec.onset_s.is_finite() || rec.onset_s < 0.0 {
        return Err(bad(format!(
            "onset_s {} must be finite and >= 0",
            rec.onset_s
        )));
    }
    if !rec.offset_s.is_finite() || rec.offset_s <= rec.onset_s {
        return Err(bad(format!(
            "offset_s {} must exceed onset_s {}",
            rec.offset_s, rec.onset_s
        )));
    }
    match rec.syllables {
        Some(0) => return Err(bad("syllables must be >= 1".into())),
        None if !options.infer_syllables => {
            return Err(CorpusError::MissingField {
                line,
                field: "syllables".into(),
            })
        }
        _ => {}
    }
    for (name, value) in [
        ("pitch", rec.pitch),
        ("energy", rec.energy),
        ("prominence", rec.prominence),
    ] {
        if matches!(value, Some(v) if !v.is_finite()) {
            return Err(bad(format!("{name} is not finite")));
        }
    }
    Ok(())
}

fn build_utterance(
    utterance_id: String,
    records: Vec<(usize, RawRecord)>,
    options: &LoadOptions,
    report: &mut LoadReport,
) -> Result<Option<Utterance>, CorpusError> {
    let speaker_id = records[0].1.speaker_id.clone();
    let mut words: Vec<WordRecord> = Vec::with_capacity(records.len());
    let mut prev: Option<(f64, f64)> = None;
    for (expected, (line, rec)) in records.into_iter().enumerate() {
        let bad = |reason: String| CorpusError::InvalidRecord {
            line,
            utterance_id: utterance_id.clone(),
            position: rec.position,
            reason,
        };
        if rec.position != expected {
            return Err(bad(format!(
                "expected position {expected}; records must be sorted without gaps"
            )));
        }
        if rec.speaker_id != speaker_id {
            return Err(bad(format!(
                "speaker `{}` differs from utterance speaker `{speaker_id}`",
                rec.speaker_id
            )));
        }
        if let Some((prev_onset, prev_offset)) = prev {
            if rec.onset_s < prev_onset {
                return Err(bad("word starts before the previous word".into()));
            }
            if rec.onset_s < prev_offset {
                report.overlapping_words += 1;
            }
        }
        prev = Some((rec.onset_s, rec.offset_s));

        let token = strip_punctuation(&rec.token);
        if token.is_empty() {
            report.dropped_tokens += 1;
            continue;
        }
        let syllables = rec.syllables.unwrap_or_else(|| count_syllables(&token));
        debug_assert!(syllables >= 1 || !options.infer_syllables);
        let features = [
            (rec.pitch, FeatureKind::Pitch),
            (rec.energy, FeatureKind::Energy),
            (rec.prominence, FeatureKind::AbsProminence),
        ]
        .into_iter()
        .filter_map(|(v, k)| v.map(|v| (k, v)))
        .collect();
        words.push(WordRecord {
            token,
            utterance_id: utterance_id.clone(),
            speaker_id: speaker_id.clone(),
            position: words.len(),
            onset_s: rec.onset_s,
            offset_s: rec.offset_s,
            syllables,
            features,
        });
    }
    if words.len() < MIN_UTTERANCE_WORDS {
        report.dropped_utterances.push((utterance_id, words.len()));
        return Ok(None);
    }
    Ok(Some(Utterance {
        utterance_id,
        speaker_id,
        words,
    }))
}

fn write_record<W: Write>(out: &mut W, w: &WordRecord) -> std::io::Result<()> {
    let json_str = |s: &str| serde_json::to_string(s).expect("string serialization");
    write!(
        out,
        "{{\"utterance_id\":{},\"speaker_id\":{},\"position\":{},\"token\":{},\"onset_s\":{},\"offset_s\":{},\"syllables\":{}",
        json_str(&w.utterance_id),
        json_str(&w.speaker_id),
        w.position,
        json_str(&w.token),
        fmt_exact(w.onset_s),
        fmt_exact(w.offset_s),
        w.syllables,
    )?;
    for (name, kind) in STORED_FIELDS {
        match w.feature(kind) {
            Some(v) => write!(out, ",\"{name}\":{}", fmt_exact(v))?,
            None => write!(out, ",\"{name}\":null")?,
        }
    }
    writeln!(out, "}}")
}

/// Writes the corpora to one line-delimited file and its sidecar manifest.
pub fn save_corpus(
    path: &Path,
    corpora: &[&Corpus],
    transforms: &[String],
    metadata: Option<serde_json::Value>,
) -> Result<(), CorpusError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| CorpusError::Io { path: p, source }
    };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        splits: BTreeMap::new(),
        transforms: transforms.to_vec(),
        metadata,
    };
    for corpus in corpora {
        let ids = manifest.splits.entry(corpus.split).or_default();
        for u in &corpus.utterances {
            ids.push(u.utterance_id.clone());
            for w in &u.words {
                write_record(&mut out, w).map_err(io_err(path))?;
            }
        }
    }
    out.flush().map_err(io_err(path))?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(())
}
