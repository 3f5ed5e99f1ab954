use std::collections::BTreeMap;

use ctxmi::corpus::{
    load_corpus, load_manifest, save_corpus, strip_punctuation, Corpus, FeatureKind, FeatureSeries,
    Split, Utterance, WordRecord,
};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = (String, f64, f64, u32, Option<f64>, Option<f64>)> {
    (
        "[a-z]{1,8}",
        0.0f64..0.5,
        0.01f64..1.0,
        1u32..5,
        proptest::option::of(-1e6f64..1e6),
        proptest::option::of(proptest::num::f64::NORMAL),
    )
}

fn utterance(split: Split, index: usize) -> impl Strategy<Value = Utterance> {
    (proptest::collection::vec(word(), 3..12), 0usize..3).prop_map(move |(words, speaker)| {
        let utterance_id = format!("{split}-{index}");
        let speaker_id = format!("spk{speaker}");
        let mut clock = 0.0;
        let words = words
            .into_iter()
            .enumerate()
            .map(|(position, (token, gap, dur, syllables, pitch, energy))| {
                let onset_s = clock + gap;
                let offset_s = onset_s + dur;
                clock = offset_s;
                let mut features = BTreeMap::new();
                if let Some(p) = pitch {
                    features.insert(FeatureKind::Pitch, p);
                }
                if let Some(e) = energy {
                    features.insert(FeatureKind::Energy, e);
                }
                WordRecord {
                    token,
                    utterance_id: utterance_id.clone(),
                    speaker_id: speaker_id.clone(),
                    position,
                    onset_s,
                    offset_s,
                    syllables,
                    features,
                }
            })
            .collect();
        Utterance {
            utterance_id,
            speaker_id,
            words,
        }
    })
}

fn corpus(split: Split) -> impl Strategy<Value = Corpus> {
    (1usize..5)
        .prop_flat_map(move |k| (0..k).map(|i| utterance(split, i)).collect::<Vec<_>>())
        .prop_map(move |u| Corpus::new(split, u).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_then_load_is_identity(train in corpus(Split::Train), test in corpus(Split::Test)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&path, &[&train, &test], &["zscore:pitch".to_owned()], None).unwrap();
        prop_assert_eq!(load_corpus(&path, Split::Train).unwrap(), train);
        prop_assert_eq!(load_corpus(&path, Split::Test).unwrap(), test);
        prop_assert_eq!(load_corpus(&path, Split::Validation).unwrap().utterances.len(), 0);
        prop_assert_eq!(load_manifest(&path).unwrap().unwrap().transforms, vec!["zscore:pitch".to_owned()]);

        // a second save of the loaded data is byte-identical
        let again = dir.path().join("d.jsonl");
        let t = load_corpus(&path, Split::Train).unwrap();
        let s = load_corpus(&path, Split::Test).unwrap();
        save_corpus(&again, &[&t, &s], &["zscore:pitch".to_owned()], None).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn strip_punctuation_is_idempotent(raw in "\\PC{0,16}") {
        let once = strip_punctuation(&raw);
        prop_assert_eq!(strip_punctuation(&once), once);
    }

    #[test]
    fn series_keeps_every_word(c in corpus(Split::Train)) {
        // relative prominence needs absolute prominence on every word
        for kind in FeatureKind::ALL.into_iter().filter(|&k| k != FeatureKind::RelProminence) {
            let s = FeatureSeries::from_corpus(&c, kind).unwrap();
            prop_assert_eq!(s.word_count(), c.word_count());
            prop_assert!(s.sample_count() <= s.word_count());
        }
        // pause exists for every word but the last of each utterance
        let pause = FeatureSeries::from_corpus(&c, FeatureKind::Pause).unwrap();
        prop_assert_eq!(pause.sample_count(), c.word_count() - c.utterances.len());
    }
}
