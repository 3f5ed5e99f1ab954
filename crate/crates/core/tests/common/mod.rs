#![allow(dead_code)]

use ctxmi::corpus::{FeatureKind, FeatureSeries};
use ctxmi::predictor::TrainConfig;
use ctxmi::synthetic::{comparable_weights, noise_sd_for_mi, ProcessSpec, SyntheticProcess};

pub fn process(
    vocab_size: usize,
    past: usize,
    future: usize,
    target_mi: f64,
    seed: u64,
) -> SyntheticProcess {
    let weights = comparable_weights(past, future);
    let noise_sd = noise_sd_for_mi(&weights, 1.0, target_mi);
    SyntheticProcess::new(ProcessSpec {
        vocab_size,
        past,
        future,
        weights,
        noise_sd,
        utterance_len: [8, 20],
        seed,
    })
    .expect("valid process")
}

pub struct Data {
    pub train: FeatureSeries,
    pub validation: FeatureSeries,
    pub test: FeatureSeries,
}

pub fn split(p: &SyntheticProcess, sizes: [usize; 3], seed: u64) -> Data {
    Data {
        train: p.series(FeatureKind::Pitch, sizes[0], seed),
        validation: p.series(FeatureKind::Pitch, sizes[1], seed + 1),
        test: p.series(FeatureKind::Pitch, sizes[2], seed + 2),
    }
}

pub fn quick_train(max_epochs: usize, span_max: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        span_max,
        seed,
        ..TrainConfig::default()
    }
}
