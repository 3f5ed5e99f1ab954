//! The pipeline steps behind each subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{
    curves_svg, heatmap_svg, histogram, write_entropy_table, write_file, write_grid,
    write_histogram, write_plateaus, Provenance,
};
use super::config::{derive_seed, RunConfig};
use super::CliError;
use crate::conditional::{compatible_families, select_family, DistFamily};
use crate::corpus::{
    compute_pause, load_corpus_with, load_manifest, save_corpus, Corpus, FeatureKind,
    FeatureSeries, LoadOptions, SpeakerStats, Split,
};
use crate::density::{
    default_bandwidth_grid, estimate_entropy, fit_kde_with, KdeModel, KdeOptions, Subsample,
};
use crate::mi_sweep::{average_grids, read_grid_csv, sweep, GridLabel, MiGrid, PlateauReport};
use crate::predictor::{train, Predictor, PredictorModel, RemotePredictor};
use crate::synthetic::SyntheticProcess;

pub struct Context {
    pub cfg: RunConfig,
    pub prov: Provenance,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let prov = Provenance {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
        };
        Context { cfg, prov }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.out("corpus/corpus.jsonl")
    }

    fn model_path(&self, kind: &str, feature: FeatureKind) -> PathBuf {
        self.out(&format!("models/{kind}_{feature}.json"))
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.seed, tag)
    }
}

/// Generates train, validation and test corpora from the configured process.
pub fn synth(ctx: &Context) -> Result<(), CliError> {
    let s =
        ctx.cfg.synthetic.as_ref().ok_or_else(|| {
            CliError::Config("the synth command needs a [synthetic] section".into())
        })?;
    let process = SyntheticProcess::new(s.process_spec(ctx.seed("process")))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let sizes = [
        (Split::Train, s.train_utterances),
        (Split::Validation, s.validation_utterances),
        (Split::Test, s.test_utterances),
    ];
    let corpora = sizes
        .iter()
        .map(|&(split, n)| {
            process
                .generate(split, n, ctx.seed(&format!("synthetic:{split}")))
                .map_err(|e| CliError::Data(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metadata = serde_json::json!({
        "provenance": ctx.prov,
        "process": process.spec(),
        "effects": process.effects(),
    });
    let path = ctx.corpus_path();
    fs::create_dir_all(path.parent().expect("has parent"))?;
    save_corpus(
        &path,
        &corpora.iter().collect::<Vec<_>>(),
        &[],
        Some(metadata),
    )?;
    for c in &corpora {
        log::info!(
            "{}: {} utterances, {} words",
            c.split,
            c.utterances.len(),
            c.word_count()
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitSummary {
    utterances: usize,
    words: usize,
    dropped_utterances: usize,
    dropped_tokens: usize,
    overlapping_words: usize,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    config_sha256: String,
    seed: u64,
    transforms: Vec<String>,
    /// Fraction of words (that have a following word) with zero pause.
    zero_pause_fraction: f64,
    splits: BTreeMap<String, SplitSummary>,
}

/// Loads, validates and normalizes the configured corpus and writes it in
/// the standard format. Transforms already recorded in the input manifest
/// are not applied again.
pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let data = ctx
        .cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("the ingest command needs a [data] section".into()))?;
    let opts = LoadOptions {
        infer_syllables: data.infer_syllables,
    };
    let sources: Vec<(Split, &Path)> = match &data.corpus {
        Some(p) => {
            if load_manifest(p)?.is_none() {
                return Err(CliError::Data(format!(
                    "{} has no manifest assigning splits; give per-split files instead",
                    p.display()
                )));
            }
            Split::ALL.iter().map(|&s| (s, p.as_path())).collect()
        }
        None => vec![
            (Split::Train, data.train.as_deref().expect("validated")),
            (
                Split::Validation,
                data.validation.as_deref().expect("validated"),
            ),
            (Split::Test, data.test.as_deref().expect("validated")),
        ],
    };

    let mut transforms: Vec<String> = Vec::new();
    let mut metadata = None;
    let mut corpora = Vec::new();
    let mut splits = BTreeMap::new();
    for (i, (split, path)) in sources.iter().enumerate() {
        if let Some(m) = load_manifest(path)? {
            if i == 0 {
                transforms = m.transforms.clone();
                metadata = m.metadata.clone();
            } else if m.transforms != transforms {
                return Err(CliError::Data(
                    "split files record different transforms".into(),
                ));
            }
        }
        let (corpus, report) = load_corpus_with(path, *split, &opts)?;
        if corpus.utterances.is_empty() {
            return Err(CliError::Data(format!(
                "{} split from {} is empty",
                split,
                path.display()
            )));
        }
        splits.insert(
            split.to_string(),
            SplitSummary {
                utterances: corpus.utterances.len(),
                words: corpus.word_count(),
                dropped_utterances: report.dropped_utterances.len(),
                dropped_tokens: report.dropped_tokens,
                overlapping_words: report.overlapping_words,
            },
        );
        corpora.push(corpus);
    }

    for &kind in &data.zscore {
        let tag = format!("zscore:{kind}");
        if transforms.contains(&tag) {
            log::info!("{tag} already applied; skipping");
            continue;
        }
        let stats = SpeakerStats::fit(&corpora[0], kind)?;
        corpora = corpora
            .iter()
            .map(|c| stats.apply(c))
            .collect::<Result<_, _>>()?;
        transforms.push(tag);
    }

    let metadata = metadata.unwrap_or_else(|| serde_json::json!({ "provenance": ctx.prov }));
    let path = ctx.corpus_path();
    fs::create_dir_all(path.parent().expect("has parent"))?;
    save_corpus(
        &path,
        &corpora.iter().collect::<Vec<_>>(),
        &transforms,
        Some(metadata),
    )?;

    let (mut zero, mut total) = (0usize, 0usize);
    for u in corpora.iter().flat_map(|c| &c.utterances) {
        for p in compute_pause(u).into_iter().flatten() {
            total += 1;
            zero += usize::from(p == 0.0);
        }
    }
    let summary = IngestSummary {
        config_sha256: ctx.prov.config_sha256.clone(),
        seed: ctx.prov.seed,
        transforms,
        zero_pause_fraction: if total > 0 {
            zero as f64 / total as f64
        } else {
            0.0
        },
        splits,
    };
    let text = toml::to_string(&summary).map_err(std::io::Error::other)?;
    write_file(
        &ctx.out("ingest_summary.toml"),
        format!("# {}\n{text}", ctx.prov.line()).as_bytes(),
    )?;
    print!("{text}");
    Ok(())
}

/// Train, validation and test corpora, preparing them first if needed.
fn prepared(ctx: &Context) -> Result<Vec<Corpus>, CliError> {
    let path = ctx.corpus_path();
    if !path.exists() {
        if ctx.cfg.synthetic.is_some() {
            synth(ctx)?;
        } else if ctx.cfg.data.is_some() {
            ingest(ctx)?;
        } else {
            return Err(CliError::Config(
                "no prepared corpus and neither [data] nor [synthetic] configured".into(),
            ));
        }
    }
    Split::ALL
        .iter()
        .map(|&s| Ok(load_corpus_with(&path, s, &LoadOptions::default())?.0))
        .collect()
}

struct Splits {
    train: FeatureSeries,
    validation: FeatureSeries,
    test: FeatureSeries,
}

fn series(corpora: &[Corpus], feature: FeatureKind) -> Result<Splits, CliError> {
    let get = |i: usize| -> Result<FeatureSeries, CliError> {
        let s = FeatureSeries::from_corpus(&corpora[i], feature)?;
        if s.sample_count() == 0 {
            return Err(CliError::Data(format!(
                "feature {feature} has no values in the {} split",
                corpora[i].split
            )));
        }
        Ok(s)
    };
    Ok(Splits {
        train: get(0)?,
        validation: get(1)?,
        test: get(2)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct KdeArtifact {
    provenance: Provenance,
    feature: FeatureKind,
    bandwidth: f64,
    subsample: Option<Subsample>,
    /// `(bandwidth, mean validation log-likelihood)` per candidate.
    scores: Vec<(f64, f64)>,
}

fn kde_options(ctx: &Context, feature: FeatureKind) -> KdeOptions {
    KdeOptions {
        max_centers: ctx.cfg.density.max_centers,
        seed: ctx.seed(&format!("kde:{feature}")),
    }
}

fn fit_prior_one(ctx: &Context, feature: FeatureKind, s: &Splits) -> Result<KdeModel, CliError> {
    let train = s.train.values();
    let grid = default_bandwidth_grid(&train, ctx.cfg.density.bandwidths);
    let fit = fit_kde_with(
        &train,
        &s.validation.values(),
        &grid,
        &kde_options(ctx, feature),
    )?;
    let art = KdeArtifact {
        provenance: ctx.prov.clone(),
        feature,
        bandwidth: fit.model.bandwidth(),
        subsample: fit.model.subsample(),
        scores: fit.scores.clone(),
    };
    let json = serde_json::to_string_pretty(&art).expect("serializes") + "\n";
    write_file(&ctx.model_path("kde", feature), json.as_bytes())?;
    Ok(fit.model)
}

/// The fitted unconditional model, refitting at the recorded bandwidth when
/// `fit-prior` already ran.
fn load_prior(ctx: &Context, feature: FeatureKind, s: &Splits) -> Result<KdeModel, CliError> {
    let path = ctx.model_path("kde", feature);
    if !path.exists() {
        return fit_prior_one(ctx, feature, s);
    }
    let art: KdeArtifact = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let train = s.train.values();
    Ok(fit_kde_with(
        &train,
        &s.validation.values(),
        &[art.bandwidth],
        &kde_options(ctx, feature),
    )?
    .model)
}

fn write_feature_tables(ctx: &Context, feature: FeatureKind, s: &Splits) -> Result<(), CliError> {
    let bins = histogram(&s.train.values(), ctx.cfg.density.histogram_bins);
    write_histogram(
        &ctx.out(&format!("histogram_{feature}.csv")),
        &bins,
        &ctx.prov,
    )?;
    Ok(())
}

/// Fits the unconditional density of every feature and reports its entropy
/// on the test split.
pub fn fit_prior(ctx: &Context) -> Result<(), CliError> {
    let corpora = prepared(ctx)?;
    let mut rows = Vec::new();
    for &feature in &ctx.cfg.features {
        let s = series(&corpora, feature)?;
        let kde = fit_prior_one(ctx, feature, &s)?;
        let h = estimate_entropy(&kde, &s.test.values())?;
        println!(
            "{feature}: bandwidth {:.6}, entropy {:.4} ± {:.4} nats",
            kde.bandwidth(),
            h.value,
            h.sem
        );
        rows.push((feature.to_string(), h.value));
        write_feature_tables(ctx, feature, &s)?;
    }
    write_entropy_table(&ctx.out("unconditional_entropy.csv"), &rows, &ctx.prov)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorArtifact {
    provenance: Provenance,
    /// Best validation cross-entropy per candidate family.
    family_scores: Vec<(DistFamily, f64)>,
    model: PredictorModel,
}

fn train_one(ctx: &Context, feature: FeatureKind, s: &Splits) -> Result<PredictorModel, CliError> {
    let mut all = s.train.values();
    all.extend(s.validation.values());
    let families = compatible_families(&ctx.cfg.families, &all);
    let mut scores = Vec::new();
    let mut models = Vec::new();
    let mut log = String::from("family,epoch,train_loss,validation_ce\n");
    for family in families {
        let mut cfg = ctx.cfg.train.clone();
        cfg.seed = ctx.seed(&format!("train:{feature}:{family}"));
        let model = train(&s.train, &s.validation, family, &cfg)?;
        let h = &model.history;
        for (e, (tl, vc)) in h.train_loss.iter().zip(&h.validation_ce).enumerate() {
            log.push_str(&format!(
                "{family},{},{},{}\n",
                e + 1,
                crate::numeric::fmt_exact(*tl),
                crate::numeric::fmt_exact(*vc)
            ));
        }
        let best = h.validation_ce[h.best_epoch - 1];
        log::info!(
            "{feature}/{family}: best validation CE {best:.5} at epoch {}",
            h.best_epoch
        );
        scores.push((family, best));
        models.push(model);
    }
    let chosen = select_family(&scores, &s.validation.values())?;
    let model = models
        .into_iter()
        .find(|m| m.family == chosen)
        .expect("selected family was trained");
    println!(
        "{feature}: family {chosen}, best epoch {}",
        model.history.best_epoch
    );
    write_file(
        &ctx.out(&format!("models/training_{feature}.csv")),
        format!("# {}\n{log}", ctx.prov.line()).as_bytes(),
    )?;
    let art = PredictorArtifact {
        provenance: ctx.prov.clone(),
        family_scores: scores,
        model,
    };
    let json = serde_json::to_string(&art).expect("serializes") + "\n";
    write_file(&ctx.model_path("predictor", feature), json.as_bytes())?;
    Ok(art.model)
}

/// Trains a predictor per feature and keeps the family with the lowest
/// validation cross-entropy.
pub fn train_all(ctx: &Context) -> Result<(), CliError> {
    let corpora = prepared(ctx)?;
    for &feature in &ctx.cfg.features {
        let s = series(&corpora, feature)?;
        train_one(ctx, feature, &s)?;
    }
    Ok(())
}

fn load_predictor(
    ctx: &Context,
    feature: FeatureKind,
    s: &Splits,
) -> Result<PredictorModel, CliError> {
    let path = ctx.model_path("predictor", feature);
    if !path.exists() {
        return train_one(ctx, feature, s);
    }
    let art: PredictorArtifact = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if art.model.feature != feature {
        return Err(CliError::Data(format!(
            "{} holds a {} model",
            path.display(),
            art.model.feature
        )));
    }
    Ok(art.model)
}

fn common_support(grids: &mut [MiGrid]) {
    let Some(first) = grids.first() else { return };
    let mut keys: Vec<(usize, usize)> = first.cells.keys().copied().collect();
    keys.retain(|k| grids.iter().all(|g| g.cells.contains_key(k)));
    for g in grids.iter_mut() {
        let before = g.cells.len();
        g.cells.retain(|k, _| keys.contains(k));
        if g.cells.len() < before {
            log::warn!(
                "{}: {} cells outside the shared support left out of the average",
                g.label,
                before - g.cells.len()
            );
        }
    }
}

fn emit_reports(ctx: &Context, grids: &[MiGrid]) -> Result<(), CliError> {
    let tolerance = ctx.cfg.sweep.tolerance;
    let mut reports = Vec::new();
    for g in grids {
        let r = PlateauReport::from_grid(g, tolerance)?;
        println!(
            "{:>15}: past scale {:>2}, future scale {:>2} (reference MI {:.4} / {:.4})",
            g.label, r.past_scale, r.future_scale, r.past_reference.mi, r.future_reference.mi
        );
        if ctx.cfg.sweep.plots {
            write_file(
                &ctx.out(&format!("heatmap_{}.svg", g.label)),
                heatmap_svg(g, &ctx.prov).as_bytes(),
            )?;
            write_file(
                &ctx.out(&format!("curves_{}.svg", g.label)),
                curves_svg(g, &r, &ctx.prov).as_bytes(),
            )?;
        }
        reports.push(r);
    }
    write_plateaus(&ctx.out("plateau.toml"), &reports, &ctx.prov)?;
    Ok(())
}

/// Grids for every feature and their average, with plateau reports,
/// histograms and the unconditional entropy table.
pub fn sweep_all(ctx: &Context) -> Result<(), CliError> {
    let corpora = prepared(ctx)?;
    let bounds = ctx.cfg.sweep.bounds();
    let mut grids = Vec::new();
    let mut entropies = Vec::new();
    for &feature in &ctx.cfg.features {
        let s = series(&corpora, feature)?;
        let kde = load_prior(ctx, feature, &s)?;
        let label = GridLabel::Feature(feature);
        let grid = match &ctx.cfg.sweep.endpoint {
            Some(endpoint) => {
                let [family] = ctx.cfg.families[..] else {
                    return Err(CliError::Config(
                        "a remote predictor needs exactly one family".into(),
                    ));
                };
                let remote = RemotePredictor::new(endpoint.clone(), feature, family)
                    .with_max_window(ctx.cfg.train.span_max);
                sweep(label, &remote as &dyn Predictor, &kde, &s.test, &bounds)?
            }
            None => {
                let model = load_predictor(ctx, feature, &s)?;
                sweep(label, &model, &kde, &s.test, &bounds)?
            }
        };
        write_grid(&ctx.out(&format!("grid_{feature}.csv")), &grid, &ctx.prov)?;
        entropies.push((feature.to_string(), grid.h_uncond));
        write_feature_tables(ctx, feature, &s)?;
        grids.push(grid);
    }
    let mut shared = grids.clone();
    common_support(&mut shared);
    let average = average_grids(&shared)?;
    write_grid(&ctx.out("grid_average.csv"), &average, &ctx.prov)?;
    write_entropy_table(&ctx.out("unconditional_entropy.csv"), &entropies, &ctx.prov)?;
    grids.push(average);
    emit_reports(ctx, &grids)
}

/// Rebuilds plateau reports and figures from the grid CSVs alone.
pub fn report(ctx: &Context) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&ctx.cfg.out_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", ctx.cfg.out_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("grid_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "no grid CSVs in {}",
            ctx.cfg.out_dir.display()
        )));
    }
    let mut grids = Vec::new();
    for p in paths {
        let file = fs::File::open(&p)?;
        grids.push(
            read_grid_csv(std::io::BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        );
    }
    grids.sort_by_key(|g| g.label);
    emit_reports(ctx, &grids)
}
