//! Span-sampling training loop with validation early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{self, Layout, ModelConfig};
use super::{sample_span, PredictError, PredictorModel, Vocabulary, MAX_WINDOW, UNK};
use crate::conditional::{nll_and_raw_grad, DistFamily};
use crate::corpus::FeatureSeries;
use crate::numeric::{compensated_sum, mean, population_std, softplus_inverse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub span_min: usize,
    pub span_max: usize,
    /// Spans per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Set by the caller rather than read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub grad_clip: f64,
    /// Spans drawn from each training utterance per epoch.
    pub spans_per_utterance: usize,
    /// Spans drawn once from each validation utterance.
    pub validation_spans_per_utterance: usize,
    /// Probability of replacing a training token by the unknown-word id.
    pub unk_rate: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            span_min: 1,
            span_max: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            grad_clip: 5.0,
            spans_per_utterance: 4,
            validation_spans_per_utterance: 4,
            unk_rate: 0.02,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        let fail = |m: &str| Err(PredictError::Config(m.to_owned()));
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if self.span_min < 1 || self.span_min > self.span_max || self.span_max > MAX_WINDOW {
            return fail("span range must satisfy 1 <= span_min <= span_max <= 11");
        }
        if self.batch_size < 1 || self.max_epochs < 1 || self.spans_per_utterance < 1 {
            return fail("batch_size, max_epochs and spans_per_utterance must be positive");
        }
        if self.validation_spans_per_utterance < 1 {
            return fail("validation_spans_per_utterance must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.unk_rate) {
            return fail("unk_rate must lie in [0, 1)");
        }
        if self.model.embed_dim < 1 {
            return fail("embed_dim must be positive");
        }
        Ok(())
    }
}

/// Patience counter over validation losses. A loss counts as an
/// improvement only when strictly below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss of `epoch` (1-based); returns whether it improved.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Replays a fixed loss sequence through [`EarlyStopping`]; returns the
/// epoch training stops after and the epoch whose snapshot is kept.
pub fn run_early_stopping(losses: &[f64], patience: usize) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    for (i, &l) in losses.iter().enumerate() {
        es.observe(i + 1, l);
        if es.should_stop() {
            return (i + 1, es.best_epoch());
        }
    }
    (losses.len(), es.best_epoch())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_ce: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Example {
    pub ids: Vec<usize>,
    pub targets: Vec<(usize, f64)>,
}

struct Encoded {
    ids: Vec<usize>,
    values: Vec<Option<f64>>,
}

fn encode(series: &FeatureSeries, vocab: &Vocabulary) -> Vec<Encoded> {
    series
        .utterances
        .iter()
        .filter(|u| !u.tokens.is_empty() && u.values.iter().any(Option::is_some))
        .map(|u| Encoded {
            ids: u.tokens.iter().map(|t| vocab.id(t)).collect(),
            values: u.values.clone(),
        })
        .collect()
}

fn span_example(
    u: &Encoded,
    cfg: &TrainConfig,
    unk_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Example> {
    let s = sample_span(u.ids.len(), cfg.span_min, cfg.span_max, rng);
    let ids = u.ids[s.start..s.start + s.len]
        .iter()
        .map(|&id| {
            if unk_rate > 0.0 && rng.random::<f64>() < unk_rate {
                UNK
            } else {
                id
            }
        })
        .collect();
    let targets: Vec<(usize, f64)> = (0..s.len)
        .filter_map(|i| u.values[s.start + i].map(|y| (i, y)))
        .collect();
    (!targets.is_empty()).then_some(Example { ids, targets })
}

/// Initial head bias: the unconditional fit of the family to the targets,
/// expressed in raw (pre-constraint) coordinates.
fn head_bias(values: &[f64], family: DistFamily) -> [f64; 2] {
    let floor = 1e-3;
    match family {
        DistFamily::Gaussian => [
            mean(values),
            softplus_inverse(population_std(values).max(floor)),
        ],
        DistFamily::Laplace => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            let mad = mean(
                &values
                    .iter()
                    .map(|v| (v - median).abs())
                    .collect::<Vec<_>>(),
            );
            [median, softplus_inverse(mad.max(floor))]
        }
        DistFamily::Gamma => {
            let mu = mean(values);
            let var = population_std(values).powi(2).max(floor);
            [
                softplus_inverse((mu * mu / var).max(floor)),
                softplus_inverse((mu / var).max(floor)),
            ]
        }
    }
}

/// Mean NLL over the batch's targets and its gradient, accumulated into
/// `grad` (which must be zero on entry for touched entries).
pub(crate) fn batch_loss_and_grad(
    params: &[f64],
    layout: &Layout,
    family: DistFamily,
    batch: &[Example],
    grad: &mut [f64],
) -> Result<f64, crate::conditional::DistError> {
    let count: usize = batch.iter().map(|e| e.targets.len()).sum();
    let scale = 1.0 / count as f64;
    let mut losses = Vec::with_capacity(count);
    for ex in batch {
        let (out, cache) = model::forward(params, layout, &ex.ids);
        let mut d_out = vec![[0.0; 2]; ex.ids.len()];
        for &(i, y) in &ex.targets {
            let (nll, g) = nll_and_raw_grad(out[i], family, y)?;
            losses.push(nll);
            d_out[i] = [g[0] * scale, g[1] * scale];
        }
        model::backward(params, layout, &ex.ids, &cache, &d_out, grad);
    }
    Ok(compensated_sum(losses) * scale)
}

fn validation_ce(params: &[f64], layout: &Layout, family: DistFamily, examples: &[Example]) -> f64 {
    use rayon::prelude::*;
    let per: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|ex| {
            let (out, _) = model::forward(params, layout, &ex.ids);
            ex.targets
                .iter()
                .map(|&(i, y)| {
                    nll_and_raw_grad(out[i], family, y)
                        .map(|(l, _)| l)
                        .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect();
    let flat: Vec<f64> = per.into_iter().flatten().collect();
    compensated_sum(flat.iter().copied()) / flat.len() as f64
}

/// Adam with lazy updates for embedding rows: a token row only moves on
/// steps where it received gradient.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(size: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], ranges: &[std::ops::Range<usize>]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for r in ranges {
            for i in r.clone() {
                let g = grad[i];
                self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
                self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

/// Largest relative difference, over every parameter of a freshly
/// initialized model, between the analytic gradient of the mean NLL of
/// `samples` and its central finite difference with step `h`. Each sample is
/// `(token ids, target position, value)`.
pub fn gradient_check(
    family: DistFamily,
    config: &ModelConfig,
    vocab_size: usize,
    samples: &[(Vec<usize>, usize, f64)],
    seed: u64,
    h: f64,
) -> Result<f64, PredictError> {
    if let Some(&(_, _, value)) = samples.iter().find(|s| !family.supports(s.2)) {
        return Err(PredictError::IncompatibleFamily { family, value });
    }
    if let Some(s) = samples
        .iter()
        .find(|s| s.0.is_empty() || s.0.len() > MAX_WINDOW || s.1 >= s.0.len())
    {
        return Err(PredictError::WindowLength(s.0.len()));
    }
    if samples
        .iter()
        .flat_map(|s| &s.0)
        .any(|&id| id >= vocab_size)
    {
        return Err(PredictError::Config(
            "token id outside the vocabulary".into(),
        ));
    }
    let layout = Layout::new(vocab_size, config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model::init_params(&layout, [0.3, 0.2], &mut rng);
    let batch: Vec<Example> = samples
        .iter()
        .map(|(ids, t, v)| Example {
            ids: ids.clone(),
            targets: vec![(*t, *v)],
        })
        .collect();
    let loss = |p: &[f64], g: &mut [f64]| {
        batch_loss_and_grad(p, &layout, family, &batch, g).expect("values checked against support")
    };
    let mut grad = vec![0.0; layout.total];
    loss(&params, &mut grad);
    let mut scratch = vec![0.0; layout.total];
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..layout.total {
        p[i] = params[i] + h;
        let up = loss(&p, &mut scratch);
        p[i] = params[i] - h;
        let down = loss(&p, &mut scratch);
        p[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Trains the built-in predictor on `train`, early-stopping on the
/// cross-entropy over spans drawn once from `validation`.
pub fn train(
    train: &FeatureSeries,
    validation: &FeatureSeries,
    family: DistFamily,
    cfg: &TrainConfig,
) -> Result<PredictorModel, PredictError> {
    cfg.validate()?;
    let train_values = train.values();
    if train_values.is_empty() {
        return Err(PredictError::NoTargets("training"));
    }
    if let Some(&bad) = train_values
        .iter()
        .chain(validation.values().iter())
        .find(|&&y| !family.supports(y))
    {
        return Err(PredictError::IncompatibleFamily { family, value: bad });
    }

    let vocab = Vocabulary::build(
        train
            .utterances
            .iter()
            .flat_map(|u| u.tokens.iter().map(String::as_str)),
    );
    let layout = Layout::new(vocab.len(), &cfg.model);
    let train_set = encode(train, &vocab);
    let val_set = encode(validation, &vocab);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model::init_params(&layout, head_bias(&train_values, family), &mut rng);

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let val_examples: Vec<Example> = val_set
        .iter()
        .flat_map(|u| {
            (0..cfg.validation_spans_per_utterance)
                .filter_map(|_| span_example(u, cfg, 0.0, &mut val_rng))
                .collect::<Vec<_>>()
        })
        .collect();
    if val_examples.is_empty() {
        return Err(PredictError::NoTargets("validation"));
    }

    let d = layout.dim;
    let dense = layout.dense_range();
    let mut adam = Adam::new(layout.total, cfg.learning_rate);
    let mut grad = vec![0.0; layout.total];
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut examples = Vec::with_capacity(order.len() * cfg.spans_per_utterance);
        for &u in &order {
            for _ in 0..cfg.spans_per_utterance {
                if let Some(ex) = span_example(&train_set[u], cfg, cfg.unk_rate, &mut rng) {
                    examples.push(ex);
                }
            }
        }
        let mut epoch_losses = Vec::new();
        for (b, batch) in examples.chunks(cfg.batch_size).enumerate() {
            let mut rows: Vec<usize> = batch.iter().flat_map(|e| e.ids.iter().copied()).collect();
            rows.sort_unstable();
            rows.dedup();
            let mut ranges: Vec<std::ops::Range<usize>> = rows
                .iter()
                .map(|&r| layout.token_emb + r * d..layout.token_emb + (r + 1) * d)
                .collect();
            ranges.push(dense.clone());
            for r in &ranges {
                grad[r.clone()].fill(0.0);
            }

            let loss = batch_loss_and_grad(&params, &layout, family, batch, &mut grad)
                .map_err(|_| PredictError::NonFiniteLoss { epoch, batch: b })?;
            if !loss.is_finite() {
                return Err(PredictError::NonFiniteLoss { epoch, batch: b });
            }
            let norm = ranges
                .iter()
                .flat_map(|r| grad[r.clone()].iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(PredictError::NonFiniteLoss { epoch, batch: b });
            }
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                for r in &ranges {
                    for g in &mut grad[r.clone()] {
                        *g *= s;
                    }
                }
            }
            adam.step(&mut params, &grad, &ranges);
            epoch_losses.push(loss);
        }

        let ce = validation_ce(&params, &layout, family, &val_examples);
        if !ce.is_finite() {
            return Err(PredictError::NonFiniteValidation { epoch });
        }
        history.train_loss.push(mean(&epoch_losses));
        history.validation_ce.push(ce);
        history.epochs_run = epoch;
        log::info!(
            "epoch {epoch}: train {:.5} validation {ce:.5}",
            mean(&epoch_losses)
        );
        if stopper.observe(epoch, ce) {
            best_params.copy_from_slice(&params);
        }
        if stopper.should_stop() {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();

    Ok(PredictorModel {
        feature: train.feature,
        family,
        vocabulary: vocab,
        config: cfg.model,
        max_window: cfg.span_max,
        params: best_params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::DistFamily;
    use proptest::prelude::*;

    #[test]
    fn plateau_after_second_epoch_keeps_epoch_two() {
        assert_eq!(run_early_stopping(&[5.0, 4.0, 4.0, 4.0, 4.0], 3), (5, 2));
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut es = EarlyStopping::new(1);
        assert!(es.observe(1, 2.0));
        assert!(!es.observe(2, 2.0));
        assert!(es.should_stop());
    }

    proptest! {
        #[test]
        fn strictly_decreasing_runs_to_the_end(
            start in 1.0f64..100.0,
            steps in proptest::collection::vec(0.001f64..1.0, 1..40),
            patience in 1usize..6,
        ) {
            let mut l = start;
            let losses: Vec<f64> = steps.iter().map(|s| { l -= s; l }).collect();
            prop_assert_eq!(run_early_stopping(&losses, patience), (losses.len(), losses.len()));
        }

        #[test]
        fn flat_after_k_stops_at_k_plus_patience(
            k in 1usize..20,
            patience in 1usize..6,
            extra in 0usize..10,
        ) {
            let mut losses: Vec<f64> = (0..k).map(|i| 10.0 - i as f64).collect();
            let floor = losses[k - 1];
            losses.extend(std::iter::repeat_n(floor, patience + extra));
            prop_assert_eq!(run_early_stopping(&losses, patience), (k + patience, k));
        }
    }

    fn grad_check(family: DistFamily, values: [f64; 5]) {
        let cfg = ModelConfig {
            embed_dim: 5,
            mixing_layers: 2,
        };
        let samples = [
            (vec![2, 3, 4], 0, values[0]),
            (vec![2, 3, 4], 2, values[1]),
            (vec![5], 0, values[2]),
            (vec![4, 0, 2, 3], 1, values[3]),
            (vec![4, 0, 2, 3], 3, values[4]),
        ];
        let worst = gradient_check(family, &cfg, 6, &samples, 11, 1e-4).unwrap();
        assert!(worst < 1e-3, "{family}: worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_gaussian() {
        grad_check(DistFamily::Gaussian, [0.4, -1.2, 2.0, 0.1, -0.3]);
    }

    #[test]
    fn gradient_matches_finite_differences_laplace() {
        grad_check(DistFamily::Laplace, [0.9, -1.7, 2.5, 1.1, -2.3]);
    }

    #[test]
    fn gradient_matches_finite_differences_gamma() {
        grad_check(DistFamily::Gamma, [0.4, 1.2, 2.0, 0.7, 3.1]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.patience = 3;
        cfg.span_max = 12;
        assert!(cfg.validate().is_err());
        cfg.span_max = 10;
        assert!(cfg.validate().is_ok());
    }
}
