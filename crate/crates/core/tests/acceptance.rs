//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::fmt::Display;
use std::fs;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ctxmi::conditional::{constrain, logpdf, DistFamily, DistParams};
use ctxmi::corpus::{FeatureKind, FeatureSeries};
use ctxmi::density::{default_bandwidth_grid, estimate_entropy, fit_kde};
use ctxmi::mi_sweep::{sweep, GridLabel, MiGrid, PlateauReport, SweepBounds, DEFAULT_TOLERANCE};
use ctxmi::predictor::{
    gradient_check, run_early_stopping, train, EarlyStopping, ModelConfig, TrainConfig,
};
use ctxmi::synthetic::{
    comparable_weights, noise_sd_for_mi, shuffle_values, ProcessSpec, SyntheticProcess,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: impl Display) -> Outcome {
    if ok {
        Ok(detail.to_string())
    } else {
        Err(detail.to_string())
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn kde_entropy() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let (train, rest) = draws.split_at(10_000);
    let (val, test) = rest.split_at(5_000);
    let kde = fit_kde(train, val, &default_bandwidth_grid(train, 24)).map_err(|e| e.to_string())?;
    let h = estimate_entropy(&kde, test).map_err(|e| e.to_string())?;
    let truth = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let elapsed = start.elapsed();
    check(
        (h.value - truth).abs() <= 0.03 && elapsed < Duration::from_secs(60),
        format!(
            "H = {:.4} (truth {truth:.4}, bandwidth {:.4}) in {elapsed:.2?}",
            h.value,
            kde.bandwidth()
        ),
    )
}

fn density_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for family in DistFamily::ALL {
        for _ in 0..20 {
            let p = match family {
                DistFamily::Gamma => DistParams::new(
                    family,
                    rng.random_range(1.0..12.0),
                    rng.random_range(0.2..5.0),
                ),
                _ => DistParams::new(
                    family,
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.05..3.0),
                ),
            }
            .map_err(|e| e.to_string())?;
            let sd = p.variance().sqrt();
            let (a, b) = match family {
                DistFamily::Gamma => (0.0, p.mean() + 60.0 * sd),
                _ => (p.mean() - 60.0 * sd, p.mean() + 60.0 * sd),
            };
            let pdf = |y: f64| {
                if family.supports(y) {
                    logpdf(&p, y).unwrap().exp()
                } else {
                    0.0
                }
            };
            let mass = simpson(pdf, a, b, 400_000);
            worst = worst.max((mass - 1.0).abs());
        }
    }
    // the constrained map yields valid parameters even from extreme raw outputs
    let extreme = [-800.0, -40.0, 0.0, 40.0, 800.0];
    let valid = DistFamily::ALL.iter().all(|&f| {
        extreme.iter().all(|&a| {
            extreme.iter().all(|&b| {
                let p = constrain([a, b], f);
                DistParams::new(f, p.p1, p.p2).is_ok()
            })
        })
    });
    check(
        worst <= 1e-3 && valid,
        format!("60 parameter draws, worst |mass - 1| = {worst:.2e}"),
    )
}

fn gradient() -> Outcome {
    let cfg = ModelConfig {
        embed_dim: 8,
        mixing_layers: 2,
    };
    let mut worst: f64 = 0.0;
    for (family, values) in [
        (DistFamily::Gaussian, [0.3, -1.1, 2.2, 0.0, -0.4]),
        (DistFamily::Laplace, [0.8, -1.6, 2.4, 1.2, -2.1]),
        (DistFamily::Gamma, [0.5, 1.3, 2.1, 0.8, 3.3]),
    ] {
        let samples = [
            (vec![2, 3, 4, 5], 1, values[0]),
            (vec![6], 0, values[1]),
            (vec![7, 2, 0, 3, 4, 5, 6], 3, values[2]),
            (vec![3, 3], 0, values[3]),
            (vec![5, 4, 3, 2, 7, 6, 5, 4, 3, 2, 7], 10, values[4]),
        ];
        let e = gradient_check(family, &cfg, 8, &samples, 19, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(e);
    }
    check(
        worst < 1e-3,
        format!("worst relative error over all parameters and families {worst:.2e}"),
    )
}

fn single_lag() -> SyntheticProcess {
    SyntheticProcess::new(ProcessSpec {
        vocab_size: 64,
        past: 3,
        future: 0,
        weights: vec![1.0, 0.0, 0.0, 0.0],
        noise_sd: 1.0,
        utterance_len: [10, 20],
        seed: 3,
    })
    .expect("valid process")
}

fn oracle_agreement() -> Outcome {
    let p = single_lag();
    let a3 = p.analytic_mi(3, 0);
    let a2 = p.analytic_mi(2, 0);
    let mc3 = p
        .monte_carlo_mi(3, 0, 1_000_000, 5)
        .map_err(|e| e.to_string())?;
    let mc2 = p
        .monte_carlo_mi(2, 0, 1_000_000, 6)
        .map_err(|e| e.to_string())?;
    let half_ln2 = 0.5 * std::f64::consts::LN_2;
    check(
        (a3 - mc3).abs() <= 0.01
            && (a2 - mc2).abs() <= 0.01
            && (a3 - half_ln2).abs() < 1e-12
            && a2 == 0.0,
        format!("MI(3,0) analytic {a3:.4} MC {mc3:.4}; MI(2,0) analytic {a2:.4} MC {mc2:.4}"),
    )
}

struct PipelineRun {
    process: SyntheticProcess,
    grid: MiGrid,
    report: PlateauReport,
    words: usize,
    elapsed: Duration,
}

fn asymmetric_process() -> SyntheticProcess {
    let weights = comparable_weights(5, 1);
    let noise_sd = noise_sd_for_mi(&weights, 1.0, 0.5);
    SyntheticProcess::new(ProcessSpec {
        vocab_size: 32,
        past: 5,
        future: 1,
        weights,
        noise_sd,
        utterance_len: [15, 40],
        seed: 1,
    })
    .expect("valid process")
}

fn pipeline() -> &'static Result<PipelineRun, String> {
    static RUN: OnceLock<Result<PipelineRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let process = asymmetric_process();
        let train_s = process.series(FeatureKind::Pitch, 900, 10);
        let val_s = process.series(FeatureKind::Pitch, 180, 11);
        let test_s = process.series(FeatureKind::Pitch, 720, 12);
        let words = train_s.word_count() + val_s.word_count() + test_s.word_count();
        let (grid, _) = run_sweep(&train_s, &val_s, &test_s)?;
        let report =
            PlateauReport::from_grid(&grid, DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
        Ok(PipelineRun {
            process,
            grid,
            report,
            words,
            elapsed: start.elapsed(),
        })
    })
}

fn run_sweep(
    train_s: &FeatureSeries,
    val_s: &FeatureSeries,
    test_s: &FeatureSeries,
) -> Result<(MiGrid, usize), String> {
    let cfg = TrainConfig {
        span_max: 11,
        max_epochs: 200,
        seed: 17,
        ..TrainConfig::default()
    };
    let model = train(train_s, val_s, DistFamily::Gaussian, &cfg).map_err(|e| e.to_string())?;
    let tv = train_s.values();
    let kde = fit_kde(&tv, &val_s.values(), &default_bandwidth_grid(&tv, 24))
        .map_err(|e| e.to_string())?;
    let grid = sweep(
        GridLabel::Feature(FeatureKind::Pitch),
        &model,
        &kde,
        test_s,
        &SweepBounds::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok((grid, model.history.best_epoch))
}

fn plateau_recovery() -> Outcome {
    let run = pipeline().as_ref().map_err(Clone::clone)?;
    let r = &run.report;
    let past = run.grid.get(5, 0).ok_or("no (5,0) cell")?;
    let future = run.grid.get(0, 5).ok_or("no (0,5) cell")?;
    let combined = (past.sem.powi(2) + future.sem.powi(2)).sqrt();
    let margin = (past.mi - future.mi) / combined;
    check(
        r.past_scale.abs_diff(5) <= 1
            && r.future_scale.abs_diff(1) <= 1
            && margin >= 3.0
            && run.words <= 50_000
            && run.elapsed < Duration::from_secs(15 * 60),
        format!(
            "past scale {}, future scale {}; MI(5,0) {:.4} vs MI(0,5) {:.4} = {margin:.1} SEMs; {} words in {:.1?}",
            r.past_scale, r.future_scale, past.mi, future.mi, run.words, run.elapsed
        ),
    )
}

fn estimate_accuracy() -> Outcome {
    let run = pipeline().as_ref().map_err(Clone::clone)?;
    let est = run.grid.get(5, 1).ok_or("no (5,1) cell")?.mi;
    let truth = run.process.analytic_mi(5, 1);
    let allowed = (0.15 * truth).max(0.05);
    check(
        (est - truth).abs() <= allowed,
        format!("MI(5,1) estimated {est:.4}, analytic {truth:.4}, allowed deviation {allowed:.4}"),
    )
}

fn independence_control() -> Outcome {
    let process = asymmetric_process();
    let train_s = shuffle_values(&process.series(FeatureKind::Pitch, 600, 20), 30);
    let val_s = shuffle_values(&process.series(FeatureKind::Pitch, 150, 21), 31);
    let test_s = shuffle_values(&process.series(FeatureKind::Pitch, 500, 22), 32);
    let (grid, best_epoch) = run_sweep(&train_s, &val_s, &test_s)?;
    let (worst_cell, worst) = grid
        .cells
        .iter()
        .map(|(k, c)| (*k, c.mi.abs()))
        .fold(((0, 0), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    check(
        worst <= 0.05,
        format!(
            "{} cells, largest |MI| {worst:.4} at {worst_cell:?} (best epoch {best_epoch})",
            grid.cells.len()
        ),
    )
}

fn oracle_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut violations = Vec::new();
    for i in 0..10 {
        let past = rng.random_range(0..=6);
        let future = rng.random_range(0..=4);
        let weights = (0..past + future + 1)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let p = SyntheticProcess::new(ProcessSpec {
            vocab_size: rng.random_range(2..200),
            past,
            future,
            weights,
            noise_sd: rng.random_range(0.1..3.0),
            utterance_len: [5, 10],
            seed: rng.random(),
        })
        .map_err(|e| e.to_string())?;
        for n in 0..=10 {
            for m in 0..=10 {
                let here = p.analytic_mi(n, m);
                if n > 0 && here < p.analytic_mi(n - 1, m) {
                    violations.push((i, n, m));
                }
                if m > 0 && here < p.analytic_mi(n, m - 1) {
                    violations.push((i, n, m));
                }
            }
        }
    }
    check(
        violations.is_empty(),
        format!(
            "10 processes x 121 cells, {} violations {violations:?}",
            violations.len()
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
schema_version = 1
seed = 5
features = ["pitch", "duration", "abs_prominence"]

[synthetic]
vocab_size = 16
past = 2
future = 1
utterance_len = [8, 16]
train_utterances = 120
validation_utterances = 30
test_utterances = 60

[train]
max_epochs = 6
span_max = 7
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (name, threads) in [("first", "4"), ("second", "1")] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ctxmi"))
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
                "sweep",
            ])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(out);
    }
    let mut compared = 0;
    for entry in fs::read_dir(&outputs[0]).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        if !name.to_string_lossy().ends_with(".csv") {
            continue;
        }
        let a = fs::read(outputs[0].join(&name)).map_err(|e| e.to_string())?;
        let b = fs::read(outputs[1].join(&name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    check(
        compared >= 4,
        format!("{compared} CSV files byte-identical across runs with 4 and 1 threads"),
    )
}

fn early_stopping() -> Outcome {
    let cases: [(&[f64], usize, usize); 6] = [
        (&[5.0, 4.0, 4.0, 4.0, 4.0, 1.0], 5, 2),
        (&[5.0, 4.0, 4.1, 4.2, 3.9, 4.0, 4.0, 4.0], 8, 5),
        (&[3.0, 2.0, 1.0], 3, 3),
        (&[1.0, 2.0, 3.0, 4.0, 0.5], 4, 1),
        (&[2.0, 2.0, 2.0, 2.0], 4, 1),
        (&[4.0, 3.0, 3.0, 3.0, 2.999_999, 3.0, 3.0, 3.0, 0.0], 8, 5),
    ];
    let mut failures = Vec::new();
    for (i, (losses, stop, best)) in cases.iter().enumerate() {
        let got = run_early_stopping(losses, 3);
        if got != (*stop, *best) {
            failures.push(format!("case {i}: got {got:?}, expected ({stop}, {best})"));
        }
    }
    let mut es = EarlyStopping::new(3);
    for (epoch, loss) in [(1, 1.0), (2, 1.0), (3, 1.0)] {
        es.observe(epoch, loss);
    }
    if es.should_stop() {
        failures.push("stopped after only two stale epochs".into());
    }
    es.observe(4, 1.0);
    if !es.should_stop() || es.best_epoch() != 1 {
        failures.push("did not stop after three stale epochs".into());
    }
    check(
        failures.is_empty(),
        format!(
            "{} crafted sequences, patience 3 {failures:?}",
            cases.len() + 1
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("KDE entropy correctness", kde_entropy),
        ("density normalization", density_normalization),
        ("gradient check", gradient),
        ("oracle cross-validation", oracle_agreement),
        ("plateau recovery", plateau_recovery),
        ("estimated vs analytic MI", estimate_accuracy),
        ("independence control", independence_control),
        ("oracle monotonicity", oracle_monotonicity),
        ("determinism", determinism),
        ("early stopping", early_stopping),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {label}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
