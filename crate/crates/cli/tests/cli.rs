//! End-to-end tests that drive the compiled binary the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imaginet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("the binary should spawn")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("test paths are utf-8")
}

/// Generates a small corpus under `dir` and returns its path.
fn small_corpus(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let out = run(&[
        "synth",
        "--out",
        path_str(&corpus),
        "--train-scenes",
        "12",
        "--val-scenes",
        "6",
        "--objects",
        "8",
        "--attributes",
        "4",
        "--k",
        "8",
        "--seed",
        "11",
    ]);
    assert_exit(&out, 0);
    corpus
}

/// Trains a small recurrent model on the corpus and returns the checkpoint path.
fn small_net(dir: &Path, corpus: &Path, variant: &str) -> PathBuf {
    let ckpt = dir.join(format!("{variant}.imgn"));
    let out = run(&[
        "train",
        "--variant",
        variant,
        "--captions",
        path_str(&corpus.join("train_captions.jsonl")),
        "--features",
        path_str(&corpus.join("train_features.imgf")),
        "--checkpoint",
        path_str(&ckpt),
        "--embedding-dim",
        "8",
        "--hidden-dim",
        "8",
        "--epochs",
        "2",
        "--min-count",
        "2",
        "--seed",
        "5",
    ]);
    assert_exit(&out, 0);
    ckpt
}

#[test]
fn synth_is_deterministic_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let result = run(&[
            "synth", "--out", path_str(out), "--train-scenes", "10", "--val-scenes", "4",
            "--seed", seed,
        ]);
        assert_exit(&result, 0);
    }
    for name in [
        "train_captions.jsonl",
        "train_features.imgf",
        "val_captions.jsonl",
        "val_features.imgf",
        "labels.tsv",
        "benchmark.tsv",
    ] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
    let bytes_a = std::fs::read(a.join("train_features.imgf")).unwrap();
    let bytes_c = std::fs::read(c.join("train_features.imgf")).unwrap();
    assert_ne!(bytes_a, bytes_c, "different seeds should produce different features");
}

#[test]
fn train_writes_checkpoints_a_loss_log_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = small_net(dir.path(), &corpus, "multitask");

    for suffix in ["", ".vocab", ".epoch1", ".epoch1.vocab", ".epoch2", ".epoch2.vocab"] {
        let path = PathBuf::from(format!("{}{suffix}", ckpt.display()));
        assert!(path.exists(), "missing {}", path.display());
    }
    let log = std::fs::read_to_string(format!("{}.loss.tsv", ckpt.display())).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tlt\tlv\ttotal");
    assert_eq!(lines.len(), 3, "expected a header and one row per epoch:\n{log}");
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        for f in &fields[1..] {
            f.parse::<f64>().expect("loss fields should be numbers");
        }
    }

    let again = small_net(dir.path(), &corpus, "multitask");
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(&again).unwrap(),
        "identical training runs should write identical checkpoints"
    );
}

#[test]
fn textual_training_never_touches_the_visual_half() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = small_net(dir.path(), &corpus, "textual");

    let e1 = imaginet::model::ModelParams::load(&PathBuf::from(format!(
        "{}.epoch1",
        ckpt.display()
    )))
    .unwrap();
    let e2 = imaginet::model::ModelParams::load(&ckpt).unwrap();
    assert_eq!(
        e1.image_head.data(),
        e2.image_head.data(),
        "alpha 1 leaves the image head untrained"
    );
    assert_eq!(
        e1.visual_gru.w_cand.data(),
        e2.visual_gru.w_cand.data(),
        "alpha 1 leaves the visual pathway untrained"
    );
    assert_ne!(
        e1.embeddings.data(),
        e2.embeddings.data(),
        "shared embeddings still learn from the textual loss"
    );

    // Not merely frozen between epochs: the trained image head is still the
    // exact initialization drawn from the training seed.
    let mut init_rng = imaginet::Rng::new(5);
    let init = imaginet::model::ModelParams::init(
        e2.dims(),
        imaginet_cli::commands::INIT_SCALE,
        &mut init_rng,
    );
    assert_eq!(
        init.image_head.data(),
        e2.image_head.data(),
        "the image head should never move from its initialization"
    );
}

#[test]
fn synth_rejects_an_empty_corpus_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", path_str(&dir.path().join("x")), "--train-scenes", "0"]);
    assert_exit(&out, 2);
}

#[test]
fn gradcheck_output_is_deterministic_for_a_fixed_seed() {
    let a = run(&["gradcheck", "--instances", "3", "--seed", "40"]);
    let b = run(&["gradcheck", "--instances", "3", "--seed", "40"]);
    assert_exit(&a, 0);
    assert_eq!(a.stdout, b.stdout, "same seed should reproduce the report exactly");
}

#[test]
fn a_perfectly_fit_model_scores_perfect_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = run(&[
        "synth", "--out", path_str(&corpus), "--train-scenes", "1", "--val-scenes", "1",
        "--seed", "2",
    ]);
    assert_exit(&out, 0);
    // Ridge with an intercept fit to a single image predicts that image's
    // features exactly, so retrieval over the training pool must be perfect.
    let ckpt = dir.path().join("lin.imgl");
    let out = run(&[
        "train", "--variant", "linreg",
        "--captions", path_str(&corpus.join("train_captions.jsonl")),
        "--features", path_str(&corpus.join("train_features.imgf")),
        "--checkpoint", path_str(&ckpt),
        "--min-count", "1", "--lambda", "1.0",
    ]);
    assert_exit(&out, 0);
    let report = dir.path().join("report.tsv");
    let out = run(&[
        "eval", "--which", "retrieval", "--model", path_str(&ckpt),
        "--report", path_str(&report),
        "--captions", path_str(&corpus.join("train_captions.jsonl")),
        "--features", path_str(&corpus.join("train_features.imgf")),
        "--top-k", "1",
    ]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(&report).unwrap();
    let value = text.lines().nth(1).unwrap().split('\t').nth(2).unwrap();
    assert_eq!(value, "1", "report:\n{text}");
}

#[test]
fn a_benchmark_built_from_model_cosines_correlates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = small_net(dir.path(), &corpus, "multitask");

    let params = imaginet::model::ModelParams::load(&ckpt).unwrap();
    let vocab =
        imaginet::data::Vocabulary::load(&PathBuf::from(format!("{}.vocab", ckpt.display())))
            .unwrap();
    let words: Vec<&str> = (2..8).map(|i| vocab.word(i).unwrap()).collect();
    let mut lines = String::new();
    for i in 0..words.len() {
        for j in (i + 1)..words.len() {
            let a = params.embeddings.column(vocab.get(words[i]).unwrap());
            let b = params.embeddings.column(vocab.get(words[j]).unwrap());
            let cos = imaginet::numcore::cosine(&a, &b).unwrap();
            lines.push_str(&format!("{}\t{}\t{}\n", words[i], words[j], cos));
        }
    }
    let benchmark = dir.path().join("benchmark.tsv");
    std::fs::write(&benchmark, lines).unwrap();

    let report = dir.path().join("report.tsv");
    let out = run(&[
        "eval", "--which", "similarity", "--model", path_str(&ckpt),
        "--report", path_str(&report),
        "--benchmark", path_str(&benchmark),
    ]);
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(&report).unwrap();
    let value: f64 = text.lines().nth(1).unwrap().split('\t').nth(2).unwrap().parse().unwrap();
    assert!((value - 1.0).abs() < 1e-12, "gold scores are the model's own cosines, got {value}");
}

#[test]
fn gradcheck_passes_clean_and_fails_injected() {
    let out = run(&["gradcheck", "--instances", "3", "--seed", "9"]);
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("gradient check passed"), "stdout:\n{text}");

    let out = run(&["gradcheck", "--instances", "2", "--seed", "9", "--inject-bug"]);
    assert_exit(&out, 4);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("FAILED"), "stdout:\n{text}");
}

#[test]
fn gradcheck_rejects_dimensions_too_big_for_finite_differences() {
    let out = run(&["gradcheck", "--hidden-dim", "64"]);
    assert_exit(&out, 2);
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(text.contains("hidden_dim"), "stderr:\n{text}");
}

#[test]
fn eval_appends_schema_stable_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = small_net(dir.path(), &corpus, "multitask");
    let report = dir.path().join("report.tsv");

    for condition in ["original", "scrambled"] {
        let out = run(&[
            "eval",
            "--which",
            "retrieval",
            "--model",
            path_str(&ckpt),
            "--report",
            path_str(&report),
            "--captions",
            path_str(&corpus.join("val_captions.jsonl")),
            "--features",
            path_str(&corpus.join("val_features.imgf")),
            "--condition",
            condition,
            "--seed",
            "21",
        ]);
        assert_exit(&out, 0);
    }
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "metric\tcondition\tvalue\tn_queries\tn_candidates\tseed");
    assert_eq!(lines.len(), 3);
    let first: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(first[0], "retrieval_acc@5");
    assert_eq!(first[1], "original");
    assert_eq!(first[5], "21");
    let second: Vec<&str> = lines[2].split('\t').collect();
    assert_eq!(second[1], "scrambled");
    let acc: f64 = first[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("synth.conf");
    std::fs::write(&conf, "# corpus size\ntrain_scenes = 5\nval_scenes = 2\nseed = 3\n").unwrap();

    let from_file = dir.path().join("from_file");
    let out = run(&["synth", "--out", path_str(&from_file), "--config", path_str(&conf)]);
    assert_exit(&out, 0);
    let (_, features) =
        imaginet::data::load_features(&from_file.join("train_features.imgf")).unwrap();
    assert_eq!(features.len(), 5, "train_scenes should come from the file");

    let overridden = dir.path().join("overridden");
    let out = run(&[
        "synth", "--out", path_str(&overridden), "--config", path_str(&conf),
        "--train-scenes", "7",
    ]);
    assert_exit(&out, 0);
    let (_, features) =
        imaginet::data::load_features(&overridden.join("train_features.imgf")).unwrap();
    assert_eq!(features.len(), 7, "the flag should outrank the file");

    std::fs::write(&conf, "train_scenez = 5\n").unwrap();
    let out = run(&["synth", "--out", path_str(&dir.path().join("x")), "--config", path_str(&conf)]);
    assert_exit(&out, 2);
}

#[test]
fn mismatched_artifacts_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = small_net(dir.path(), &corpus, "multitask");
    let report = dir.path().join("report.tsv");

    // Declared feature dimension disagrees with the checkpoint.
    let out = run(&[
        "eval", "--which", "retrieval", "--model", path_str(&ckpt),
        "--report", path_str(&report),
        "--captions", path_str(&corpus.join("val_captions.jsonl")),
        "--features", path_str(&corpus.join("val_features.imgf")),
        "--k", "99",
    ]);
    assert_exit(&out, 5);
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(text.contains("99") && text.contains('8'), "stderr should name both dimensions:\n{text}");

    // The order-blind baseline cannot run the order-sensitivity protocol.
    let lin = dir.path().join("lin.imgl");
    let out = run(&[
        "train", "--variant", "linreg",
        "--captions", path_str(&corpus.join("train_captions.jsonl")),
        "--features", path_str(&corpus.join("train_features.imgf")),
        "--checkpoint", path_str(&lin),
        "--min-count", "2", "--lambda", "1.0",
    ]);
    assert_exit(&out, 0);
    let out = run(&[
        "eval", "--which", "paraphrase", "--model", path_str(&lin),
        "--report", path_str(&report),
        "--captions", path_str(&corpus.join("val_captions.jsonl")),
    ]);
    assert_exit(&out, 5);

    // A checkpoint without its vocabulary sidecar is unusable.
    let orphan = dir.path().join("orphan.imgn");
    std::fs::copy(&ckpt, &orphan).unwrap();
    let out = run(&[
        "eval", "--which", "similarity", "--model", path_str(&orphan),
        "--report", path_str(&report),
        "--benchmark", path_str(&corpus.join("benchmark.tsv")),
    ]);
    assert_exit(&out, 5);
}

#[test]
fn missing_required_settings_exit_2() {
    let out = run(&["train", "--captions", "x.jsonl"]);
    assert_exit(&out, 2);
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(text.contains("--variant"), "stderr:\n{text}");
}
