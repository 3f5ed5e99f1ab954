use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxmi::conditional::DistFamily;
use ctxmi::corpus::FeatureKind;
use ctxmi::predictor::{Handshake, MockServer};

const SYNTH: &str = r#"
schema_version = 1
seed = 11

[synthetic]
vocab_size = 12
past = 1
future = 1
utterance_len = [6, 12]
train_utterances = 60
validation_utterances = 20
test_utterances = 30

[train]
max_epochs = 2
span_max = 5

[sweep]
max_past = 3
max_future = 3
"#;

fn ctxmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxmi"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(config: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = ctxmi(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn sweep_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SYNTH);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&cfg, &["--out", a.to_str().unwrap(), "sweep"]);
    run_ok(
        &cfg,
        &["--out", b.to_str().unwrap(), "--threads", "1", "sweep"],
    );

    let files = listing(&a);
    let grids: Vec<&String> = files.iter().filter(|f| f.starts_with("grid_")).collect();
    assert_eq!(grids.len(), 7, "{files:?}");
    for f in [
        "plateau.toml",
        "unconditional_entropy.csv",
        "heatmap_average.svg",
        "curves_pitch.svg",
        "histogram_pause.csv",
    ] {
        assert!(files.iter().any(|x| x == f), "missing {f}");
    }
    assert_eq!(files, listing(&b));
    for f in &files {
        let pa = a.join(f);
        if pa.is_file() {
            assert_eq!(
                fs::read(&pa).unwrap(),
                fs::read(b.join(f)).unwrap(),
                "{f} differs"
            );
        }
    }
    for f in listing(&a.join("models")) {
        assert_eq!(
            fs::read(a.join("models").join(&f)).unwrap(),
            fs::read(b.join("models").join(&f)).unwrap(),
            "{f} differs"
        );
    }

    let csv = fs::read_to_string(a.join("grid_pitch.csv")).unwrap();
    assert!(csv.starts_with("# config_sha256="));
    assert!(csv.lines().nth(1).unwrap() == "feature,n,m,h_uncond,h_cond,mi,sem,samples");
    // max_window 5 and bounds 3/3: n + m <= 4
    assert_eq!(csv.lines().count(), 2 + 13);

    // report rebuilds the same plateau file from the CSVs alone
    let before = fs::read(a.join("plateau.toml")).unwrap();
    fs::remove_file(a.join("plateau.toml")).unwrap();
    run_ok(&cfg, &["--out", a.to_str().unwrap(), "report"]);
    assert_eq!(fs::read(a.join("plateau.toml")).unwrap(), before);

    // a different seed changes results and provenance
    let c = dir.path().join("c");
    run_ok(
        &cfg,
        &["--out", c.to_str().unwrap(), "--seed", "12", "synth"],
    );
    assert_ne!(
        fs::read(a.join("corpus/corpus.jsonl")).unwrap(),
        fs::read(c.join("corpus/corpus.jsonl")).unwrap()
    );
}

#[test]
fn staged_commands_match_one_shot_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SYNTH);
    let staged = dir.path().join("staged");
    let oneshot = dir.path().join("oneshot");
    for cmd in ["synth", "fit-prior", "train", "sweep"] {
        run_ok(&cfg, &["--out", staged.to_str().unwrap(), cmd]);
    }
    run_ok(&cfg, &["--out", oneshot.to_str().unwrap(), "sweep"]);
    for f in ["grid_average.csv", "grid_energy.csv", "plateau.toml"] {
        assert_eq!(
            fs::read(staged.join(f)).unwrap(),
            fs::read(oneshot.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn reingest_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SYNTH);
    run_ok(
        &cfg,
        &["--out", dir.path().join("src").to_str().unwrap(), "synth"],
    );
    let first = write_config(
        dir.path(),
        "first.toml",
        "schema_version = 1\nout_dir = \"first\"\n[data]\ncorpus = \"src/corpus/corpus.jsonl\"\n",
    );
    let second = write_config(
        dir.path(),
        "second.toml",
        "schema_version = 1\nout_dir = \"second\"\n[data]\ncorpus = \"first/corpus/corpus.jsonl\"\nzscore = [\"pitch\"]\n",
    );
    run_ok(&first, &["ingest"]);
    run_ok(&second, &["ingest"]);
    for f in ["corpus.jsonl", "corpus.manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("first/corpus").join(f)).unwrap(),
            fs::read(dir.path().join("second/corpus").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let summary = fs::read_to_string(dir.path().join("first/ingest_summary.toml")).unwrap();
    assert!(summary.contains("zscore:pitch"));
}

#[test]
fn per_split_files_are_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let line = |u: &str, p: usize, tok: &str, on: f64| {
        format!(
            "{{\"utterance_id\":\"{u}\",\"speaker_id\":\"s\",\"position\":{p},\"token\":\"{tok}\",\"onset_s\":{on},\"offset_s\":{},\"syllables\":1,\"pitch\":{},\"energy\":{},\"prominence\":{}}}\n",
            on + 0.2,
            100.0 + 7.0 * p as f64 + u.len() as f64,
            60.0 - p as f64,
            0.5 * p as f64
        )
    };
    for (split, n) in [("train", 3), ("validation", 2), ("test", 2)] {
        let mut text = String::new();
        for i in 0..n {
            let u = format!("{split}{i}");
            for (p, tok) in ["The", "cat,", "sat", "down."].iter().enumerate() {
                text.push_str(&line(&u, p, tok, p as f64 * 0.3));
            }
        }
        fs::write(dir.path().join(format!("{split}.jsonl")), text).unwrap();
    }
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "schema_version = 1\n[data]\ntrain = \"train.jsonl\"\nvalidation = \"validation.jsonl\"\ntest = \"test.jsonl\"\n",
    );
    let out = run_ok(&cfg, &["ingest"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("words = 12"));
    let corpus = fs::read_to_string(dir.path().join("out/corpus/corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 28);
    assert!(corpus.contains("\"token\":\"cat\""));
}

#[test]
fn empty_input_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["train", "validation", "test"] {
        fs::write(dir.path().join(format!("{s}.jsonl")), "").unwrap();
    }
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "schema_version = 1\n[data]\ntrain = \"train.jsonl\"\nvalidation = \"validation.jsonl\"\ntest = \"test.jsonl\"\n",
    );
    let out = ctxmi(&["--config", cfg.to_str().unwrap(), "sweep"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ctxmi(&["--help"]).status.code(), Some(0));
    assert_eq!(ctxmi(&["--version"]).status.code(), Some(0));
    assert_eq!(ctxmi(&["frobnicate"]).status.code(), Some(1));
    let missing = dir.path().join("missing.toml");
    assert_eq!(
        ctxmi(&["--config", missing.to_str().unwrap(), "sweep"])
            .status
            .code(),
        Some(1)
    );
    let bad = write_config(dir.path(), "bad.toml", "schema_version = 9\n");
    assert_eq!(
        ctxmi(&["--config", bad.to_str().unwrap(), "sweep"])
            .status
            .code(),
        Some(1)
    );
    let nothing = write_config(dir.path(), "nothing.toml", "schema_version = 1\n");
    assert_eq!(
        ctxmi(&["--config", nothing.to_str().unwrap(), "sweep"])
            .status
            .code(),
        Some(1)
    );
    let none = dir.path().join("no_grids");
    fs::create_dir(&none).unwrap();
    let out = ctxmi(&[
        "--config",
        nothing.to_str().unwrap(),
        "--out",
        none.to_str().unwrap(),
        "report",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_against_remote_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::fixed(
        Handshake::new(FeatureKind::Pitch, DistFamily::Gaussian),
        [0.0, 2.0],
    )
    .unwrap();
    let text = format!("{SYNTH}endpoint = \"{}\"\n", server.endpoint()).replace(
        "seed = 11",
        "seed = 11\nfeatures = [\"pitch\"]\nfamilies = [\"gaussian\"]",
    );
    let cfg = write_config(dir.path(), "run.toml", &text);
    run_ok(&cfg, &["sweep"]);
    let csv = fs::read_to_string(dir.path().join("out/grid_pitch.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 13);
    assert!(!dir.path().join("out/models/predictor_pitch.json").exists());
    // a constant predictor carries no information about the context
    let mi: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert!(mi.windows(2).all(|w| (w[0] - w[1]).abs() < 0.2));

    let down = dir.path().join("down.toml");
    let addr = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    fs::write(
        &down,
        text.replace(&server.endpoint(), &addr.to_string())
            .replace("[synthetic]", "out_dir = \"down\"\n[synthetic]"),
    )
    .unwrap();
    assert_eq!(
        ctxmi(&["--config", down.to_str().unwrap(), "sweep"])
            .status
            .code(),
        Some(1)
    );
}
