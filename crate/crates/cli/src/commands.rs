//! Implementations of the four subcommands.

use crate::{
    config_map, file_value, require, resolve, resolve_opt, EvalArgs, GradcheckArgs, SynthArgs,
    TrainArgs, EXIT_GRADCHECK_FAILED,
};
use imaginet::baseline::{self, LinRegParams};
use imaginet::data::{self, CaptionRecord, SynthConfig, Vocabulary};
use imaginet::eval::{self, Condition, EvalReport};
use imaginet::layers::ActivationConfig;
use imaginet::model::{self, ModelDims, ModelParams, Variant};
use imaginet::optim::{self, AdamConfig, GradCheckConfig, TrainConfig};
use imaginet::{Error, Result, Rng, Vector};
use std::collections::BTreeSet;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const SYNTH_KEYS: &[&str] = &[
    "out", "preset", "objects", "attributes", "train_scenes", "val_scenes", "k", "noise_sigma",
    "order_signal_strength", "seed",
];
const TRAIN_KEYS: &[&str] = &[
    "variant", "captions", "features", "checkpoint", "loss_log", "preset", "alpha",
    "embedding_dim", "hidden_dim", "k", "epochs", "batch_size", "lr", "seed", "min_count",
    "max_grad_norm", "lambda",
];
const GRADCHECK_KEYS: &[&str] = &[
    "instances", "vocab_size", "embedding_dim", "hidden_dim", "k", "sentence_len", "epsilon",
    "tolerance", "samples_per_tensor", "seed", "alpha",
];
const EVAL_KEYS: &[&str] = &[
    "which", "model", "report", "captions", "features", "benchmark", "labels", "condition",
    "top_k", "recall_k", "group_size", "seed", "k", "append_end", "hold_period",
];

/// Parameter initialization half-width. Small enough that gates start
/// responsive and clip pre-activations start inside the linear region.
pub const INIT_SCALE: f64 = 0.1;

/// Gradient check instances are redrawn while any clip pre-activation sits
/// closer than this to a kink.
const KINK_MARGIN: f64 = 1e-3;

/// Loss mixes cycled over gradient check instances when --alpha is not
/// fixed: the three variants plus an even mix.
const ALPHA_CYCLE: [f64; 4] = [0.1, 0.5, 0.0, 1.0];

/// Ridge strengths tried when --lambda is not given.
const LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn vocab_sidecar(path: &Path) -> PathBuf {
    suffixed(path, ".vocab")
}

pub fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let map = config_map(args.config.as_deref(), SYNTH_KEYS)?;
    if let Some(preset) = resolve_opt(args.preset, &map, "preset")? {
        if preset != "desk" {
            return Err(Error::Config(format!("unknown preset {preset:?}; available: desk")));
        }
    }
    let out: PathBuf = require(args.out, &map, "out")?;
    let desk = SynthConfig::desk();
    let cfg = SynthConfig {
        n_objects: resolve(args.objects, &map, "objects", desk.n_objects)?,
        n_attributes: resolve(args.attributes, &map, "attributes", desk.n_attributes)?,
        train_scenes: resolve(args.train_scenes, &map, "train_scenes", desk.train_scenes)?,
        val_scenes: resolve(args.val_scenes, &map, "val_scenes", desk.val_scenes)?,
        feature_dim: resolve(args.k, &map, "k", desk.feature_dim)?,
        noise_sigma: resolve(args.noise_sigma, &map, "noise_sigma", desk.noise_sigma)?,
        order_signal_strength: resolve(
            args.order_signal_strength,
            &map,
            "order_signal_strength",
            desk.order_signal_strength,
        )?,
        seed: resolve(args.seed, &map, "seed", desk.seed)?,
    };
    let generated = data::gen_synthetic(&cfg)?;
    std::fs::create_dir_all(&out)?;
    data::save_caption_lines(&out.join("train_captions.jsonl"), &generated.train_captions)?;
    data::save_features(&out.join("train_features.imgf"), cfg.feature_dim, &generated.train_features)?;
    data::save_caption_lines(&out.join("val_captions.jsonl"), &generated.val_captions)?;
    data::save_features(&out.join("val_features.imgf"), cfg.feature_dim, &generated.val_features)?;
    data::save_labels(&out.join("labels.tsv"), &generated.labels)?;
    data::save_benchmark(&out.join("benchmark.tsv"), &generated.benchmark)?;

    let mut words: BTreeSet<String> = BTreeSet::new();
    for (_, text) in generated.train_captions.iter().chain(&generated.val_captions) {
        words.extend(data::tokenize(text));
    }
    println!(
        "wrote {} train captions over {} scenes and {} val captions over {} scenes to {}",
        generated.train_captions.len(),
        generated.train_features.len(),
        generated.val_captions.len(),
        generated.val_features.len(),
        out.display()
    );
    println!(
        "feature dimension {}, {} distinct caption words, {} labels, {} benchmark pairs, seed {}",
        cfg.feature_dim,
        words.len(),
        generated.labels.len(),
        generated.benchmark.len(),
        cfg.seed
    );
    Ok(0)
}

enum TrainVariant {
    Net(Variant),
    Linreg,
}

fn parse_variant(name: &str) -> Result<TrainVariant> {
    match name {
        "linreg" => Ok(TrainVariant::Linreg),
        "visual" | "textual" | "multitask" => Ok(TrainVariant::Net(name.parse()?)),
        other => Err(Error::Config(format!(
            "unknown variant {other:?}; expected visual, textual, multitask, or linreg"
        ))),
    }
}

struct NetDefaults {
    embedding_dim: usize,
    hidden_dim: usize,
    epochs: usize,
}

fn net_defaults(preset: Option<&str>) -> Result<NetDefaults> {
    match preset {
        None => Ok(NetDefaults { embedding_dim: 1024, hidden_dim: 1024, epochs: 8 }),
        Some("desk") => Ok(NetDefaults { embedding_dim: 32, hidden_dim: 32, epochs: 8 }),
        Some(other) => Err(Error::Config(format!("unknown preset {other:?}; available: desk"))),
    }
}

pub fn cmd_train(args: TrainArgs) -> Result<i32> {
    let map = config_map(args.config.as_deref(), TRAIN_KEYS)?;
    let preset = resolve_opt(args.preset, &map, "preset")?;
    let defaults = net_defaults(preset.as_deref())?;
    let variant = parse_variant(&require::<String>(args.variant, &map, "variant")?)?;
    let captions_path: PathBuf = require(args.captions, &map, "captions")?;
    let features_path: PathBuf = require(args.features, &map, "features")?;
    let checkpoint: PathBuf = require(args.checkpoint, &map, "checkpoint")?;
    let min_count = resolve(args.min_count, &map, "min_count", 5)?;
    let seed = resolve(args.seed, &map, "seed", 1)?;

    let captions = data::load_caption_lines(&captions_path)?;
    let (feature_dim, features) = data::load_features(&features_path)?;
    if let Some(k) = resolve_opt(args.k, &map, "k")? {
        if k != feature_dim {
            return Err(Error::Format(format!(
                "requested K = {k} but {} stores {feature_dim}-dimensional features",
                features_path.display()
            )));
        }
    }
    let corpus: Vec<Vec<String>> = captions.iter().map(|(_, t)| data::tokenize(t)).collect();
    let vocab = Vocabulary::build(&corpus, min_count)?;
    let (records, dropped) = data::join_captions_features(&captions, &features, &vocab);
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} captions without a matching feature vector");
    }
    if records.is_empty() {
        return Err(Error::Format(format!(
            "no caption id in {} matches a feature id in {}; are these files from the same corpus?",
            captions_path.display(),
            features_path.display()
        )));
    }

    match variant {
        TrainVariant::Linreg => {
            let lambda = resolve_opt(args.lambda, &map, "lambda")?;
            train_linreg(&records, &vocab, &checkpoint, lambda, seed)
        }
        TrainVariant::Net(v) => {
            let alpha = resolve_opt(args.alpha, &map, "alpha")?.unwrap_or(v.alpha());
            let cfg = TrainConfig {
                alpha,
                epochs: resolve(args.epochs, &map, "epochs", defaults.epochs)?,
                batch_size: resolve(args.batch_size, &map, "batch_size", 4)?,
                adam: AdamConfig {
                    learning_rate: resolve(args.lr, &map, "lr", 2e-4)?,
                    ..AdamConfig::default()
                },
                max_grad_norm: resolve_opt(args.max_grad_norm, &map, "max_grad_norm")?,
                seed,
            };
            let dims = ModelDims {
                vocab_size: vocab.size(),
                embedding_dim: resolve(args.embedding_dim, &map, "embedding_dim", defaults.embedding_dim)?,
                hidden_dim: resolve(args.hidden_dim, &map, "hidden_dim", defaults.hidden_dim)?,
                feature_dim,
            };
            let loss_log = resolve_opt(args.loss_log, &map, "loss_log")?
                .unwrap_or_else(|| suffixed(&checkpoint, ".loss.tsv"));
            train_net(v, cfg, dims, &records, &vocab, &checkpoint, &loss_log)
        }
    }
}

fn train_net(
    variant: Variant,
    cfg: TrainConfig,
    dims: ModelDims,
    records: &[CaptionRecord],
    vocab: &Vocabulary,
    checkpoint: &Path,
    loss_log: &Path,
) -> Result<i32> {
    if dims.embedding_dim == 0 || dims.hidden_dim == 0 {
        return Err(Error::Config("embedding_dim and hidden_dim must be positive".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    println!(
        "training {}: {} examples, vocabulary {}, embedding {}, hidden {}, features {}, alpha {}",
        variant.name(),
        records.len(),
        dims.vocab_size,
        dims.embedding_dim,
        dims.hidden_dim,
        dims.feature_dim,
        cfg.alpha
    );
    let act = ActivationConfig::default();
    let mut init_rng = Rng::new(cfg.seed);
    let mut params = ModelParams::init(dims, INIT_SCALE, &mut init_rng);
    // The shuffle stream must not replay the initialization stream.
    let cfg = TrainConfig { seed: init_rng.next_u64(), ..cfg };

    let mut log = BufWriter::new(std::fs::File::create(loss_log)?);
    writeln!(log, "epoch\tlt\tlv\ttotal")?;
    optim::run_training(&mut params, records, &cfg, &act, |stats, current| {
        writeln!(log, "{}\t{}\t{}\t{}", stats.epoch, stats.textual, stats.visual, stats.total)?;
        log.flush()?;
        let epoch_path = suffixed(checkpoint, &format!(".epoch{}", stats.epoch));
        current.save(&epoch_path)?;
        vocab.save(&vocab_sidecar(&epoch_path))?;
        println!(
            "epoch {}: textual {} visual {} total {} (clamped {})",
            stats.epoch, stats.textual, stats.visual, stats.total, stats.clamped
        );
        Ok(())
    })?;
    params.save(checkpoint)?;
    vocab.save(&vocab_sidecar(checkpoint))?;
    println!(
        "saved {} with vocabulary sidecar; loss log at {}",
        checkpoint.display(),
        loss_log.display()
    );
    Ok(0)
}

fn bow_dataset(
    records: &[CaptionRecord],
    vocab: &Vocabulary,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let inputs: Vec<Vector> = records
        .iter()
        .map(|r| baseline::bow(&r.tokens, vocab.size(), vocab.end()))
        .collect::<Result<_>>()?;
    let targets: Vec<Vector> = records.iter().map(|r| r.target.clone()).collect();
    Ok((inputs, targets))
}

fn mean_squared_error(
    params: &LinRegParams,
    inputs: &[Vector],
    targets: &[Vector],
) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        let mut diff = baseline::predict(params, x)?;
        diff.add_scaled(t, -1.0)?;
        total += diff.dot(&diff)? / t.dim() as f64;
    }
    Ok(total / inputs.len() as f64)
}

/// Picks a ridge strength from the grid by mean squared error on a held-out
/// tenth of the data, ties going to the smaller strength.
fn select_lambda(inputs: &[Vector], targets: &[Vector], seed: u64) -> Result<f64> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::Config(
            "lambda selection needs at least 2 examples; pass --lambda explicitly".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let (val_idx, fit_idx) = order.split_at((n / 10).max(1));
    let fit_in: Vec<Vector> = fit_idx.iter().map(|&i| inputs[i].clone()).collect();
    let fit_tg: Vec<Vector> = fit_idx.iter().map(|&i| targets[i].clone()).collect();
    let val_in: Vec<Vector> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
    let val_tg: Vec<Vector> = val_idx.iter().map(|&i| targets[i].clone()).collect();
    let mut best = LAMBDA_GRID[0];
    let mut best_mse = f64::INFINITY;
    for &lambda in &LAMBDA_GRID {
        let fitted = baseline::fit_ridge(&fit_in, &fit_tg, lambda)?;
        let mse = mean_squared_error(&fitted, &val_in, &val_tg)?;
        println!("lambda {lambda}: validation mse {mse}");
        if mse < best_mse {
            best_mse = mse;
            best = lambda;
        }
    }
    println!("selected lambda {best}");
    Ok(best)
}

fn train_linreg(
    records: &[CaptionRecord],
    vocab: &Vocabulary,
    checkpoint: &Path,
    lambda: Option<f64>,
    seed: u64,
) -> Result<i32> {
    let (inputs, targets) = bow_dataset(records, vocab)?;
    println!(
        "fitting linreg on {} examples with bag-of-words dimension {}",
        inputs.len(),
        vocab.size()
    );
    let lambda = match lambda {
        Some(l) => {
            println!("using lambda {l}");
            l
        }
        None => select_lambda(&inputs, &targets, seed)?,
    };
    let params = baseline::fit_ridge(&inputs, &targets, lambda)?;
    let mse = mean_squared_error(&params, &inputs, &targets)?;
    params.save(checkpoint)?;
    vocab.save(&vocab_sidecar(checkpoint))?;
    println!("linreg train mse {mse}; saved {} with vocabulary sidecar", checkpoint.display());
    Ok(0)
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let map = config_map(args.config.as_deref(), GRADCHECK_KEYS)?;
    let dims = ModelDims {
        vocab_size: resolve(args.vocab_size, &map, "vocab_size", 11)?,
        embedding_dim: resolve(args.embedding_dim, &map, "embedding_dim", 5)?,
        hidden_dim: resolve(args.hidden_dim, &map, "hidden_dim", 7)?,
        feature_dim: resolve(args.k, &map, "k", 4)?,
    };
    for (name, value) in [
        ("vocab_size", dims.vocab_size),
        ("embedding_dim", dims.embedding_dim),
        ("hidden_dim", dims.hidden_dim),
        ("k", dims.feature_dim),
    ] {
        if !(1..=16).contains(&value) {
            return Err(Error::Config(format!(
                "finite differences need a small model: {name} must be in 1..=16, got {value}"
            )));
        }
    }
    let sentence_len = resolve(args.sentence_len, &map, "sentence_len", 3)?;
    if !(1..=16).contains(&sentence_len) {
        return Err(Error::Config(format!(
            "sentence_len must be in 1..=16, got {sentence_len}"
        )));
    }
    let instances = resolve(args.instances, &map, "instances", 20)?;
    if instances == 0 {
        return Err(Error::Config("instances must be at least 1".into()));
    }
    let base = GradCheckConfig::default();
    let check = GradCheckConfig {
        epsilon: resolve(args.epsilon, &map, "epsilon", base.epsilon)?,
        samples_per_tensor: resolve(
            args.samples_per_tensor,
            &map,
            "samples_per_tensor",
            base.samples_per_tensor,
        )?,
        tolerance: resolve(args.tolerance, &map, "tolerance", base.tolerance)?,
        ..base
    };
    if !(check.epsilon.is_finite() && check.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {}", check.epsilon)));
    }
    if !(check.tolerance.is_finite() && check.tolerance > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {}",
            check.tolerance
        )));
    }
    let alpha_override = resolve_opt(args.alpha, &map, "alpha")?;
    if let Some(a) = alpha_override {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {a}")));
        }
    }
    let seed = resolve(args.seed, &map, "seed", 42)?;

    let act = ActivationConfig::default();
    let mut rng = Rng::new(seed);
    let mut by_tensor: Vec<(&'static str, f64)> = Vec::new();
    for i in 0..instances {
        let alpha = alpha_override.unwrap_or(ALPHA_CYCLE[i % ALPHA_CYCLE.len()]);
        let (mut params, sentence, target) =
            optim::checked_random_instance(dims, sentence_len, KINK_MARGIN, &mut rng, 200, &act)?;
        let (_, mut analytic) =
            model::example_gradients(&params, &sentence, &target, alpha, &act)?;
        if args.inject_bug {
            // Test hook: a doubled gradient must be caught on every live
            // embedding coordinate.
            analytic.embeddings.scale(2.0);
        }
        let instance_check = GradCheckConfig { seed: rng.next_u64(), ..check.clone() };
        let report = optim::grad_check(
            &mut params,
            &sentence,
            &target,
            alpha,
            &analytic,
            &act,
            &instance_check,
        )?;
        println!(
            "instance {}/{}: alpha {}, max relative error {:e}",
            i + 1,
            instances,
            alpha,
            report.max_rel_error
        );
        if by_tensor.is_empty() {
            by_tensor = report.tensors.iter().map(|t| (t.name, t.max_rel_error)).collect();
        } else {
            for (slot, t) in by_tensor.iter_mut().zip(&report.tensors) {
                slot.1 = slot.1.max(t.max_rel_error);
            }
        }
    }
    println!("worst relative error per tensor over {instances} instances:");
    let mut worst: f64 = 0.0;
    for (name, err) in &by_tensor {
        println!("  {name}\t{err:e}");
        worst = worst.max(*err);
    }
    if worst < check.tolerance {
        println!("gradient check passed: max relative error {worst:e} < {:e}", check.tolerance);
        Ok(0)
    } else {
        println!("gradient check FAILED: max relative error {worst:e} >= {:e}", check.tolerance);
        Ok(EXIT_GRADCHECK_FAILED)
    }
}

// ModelParams dwarfs LinRegParams, so the net variant lives behind a box.
enum LoadedModel {
    Net(Box<ModelParams>),
    Linreg(LinRegParams),
}

struct Loaded {
    model: LoadedModel,
    vocab: Vocabulary,
    path: PathBuf,
}

impl Loaded {
    fn feature_dim(&self) -> usize {
        match &self.model {
            LoadedModel::Net(p) => p.dims().feature_dim,
            LoadedModel::Linreg(p) => p.feature_dim(),
        }
    }

    /// Predicted image features for an encoded sentence.
    fn predict(&self, tokens: &[usize], act: &ActivationConfig) -> Result<Vector> {
        match &self.model {
            LoadedModel::Net(p) => model::predict_image(p, tokens, act),
            LoadedModel::Linreg(p) => {
                let x = baseline::bow(tokens, self.vocab.size(), self.vocab.end())?;
                baseline::predict(p, &x)
            }
        }
    }

    /// Predicted image features for a single word.
    fn project(&self, word: usize, append_end: bool, act: &ActivationConfig) -> Result<Vector> {
        match &self.model {
            LoadedModel::Net(p) => {
                if append_end {
                    model::predict_image(p, &[word, self.vocab.end()], act)
                } else {
                    model::project_word(p, word, act)
                }
            }
            LoadedModel::Linreg(p) => {
                let x = baseline::bow(&[word], self.vocab.size(), self.vocab.end())?;
                baseline::predict(p, &x)
            }
        }
    }

    /// The vector representing a word for similarity scoring: the shared
    /// embedding column, or the baseline's regression column.
    fn similarity_vector(&self, word: usize) -> Result<Vector> {
        match &self.model {
            LoadedModel::Net(p) => Ok(p.embeddings.column(word)),
            LoadedModel::Linreg(p) => p.word_vector(word),
        }
    }
}

fn load_model(path: &Path) -> Result<Loaded> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{} is too short to be a checkpoint", path.display())))?;
    drop(file);
    let sidecar = vocab_sidecar(path);
    if !sidecar.exists() {
        return Err(Error::Format(format!(
            "missing vocabulary sidecar {}; checkpoints travel with their vocabulary",
            sidecar.display()
        )));
    }
    let vocab = Vocabulary::load(&sidecar)?;
    let model = if &magic == model::CHECKPOINT_MAGIC {
        let params = ModelParams::load(path)?;
        if params.dims().vocab_size != vocab.size() {
            return Err(Error::Format(format!(
                "checkpoint {} was trained over {} words but its sidecar lists {}",
                path.display(),
                params.dims().vocab_size,
                vocab.size()
            )));
        }
        LoadedModel::Net(Box::new(params))
    } else if &magic == baseline::BASELINE_MAGIC {
        let params = LinRegParams::load(path)?;
        if params.vocab_size() != vocab.size() {
            return Err(Error::Format(format!(
                "checkpoint {} was fit over {} words but its sidecar lists {}",
                path.display(),
                params.vocab_size(),
                vocab.size()
            )));
        }
        LoadedModel::Linreg(params)
    } else {
        return Err(Error::Format(format!(
            "{}: unrecognized checkpoint magic {magic:?}",
            path.display()
        )));
    };
    Ok(Loaded { model, vocab, path: path.to_path_buf() })
}

fn check_feature_dim(loaded: &Loaded, dim: usize, features_path: &Path) -> Result<()> {
    if loaded.feature_dim() != dim {
        return Err(Error::Format(format!(
            "model {} predicts {}-dimensional features but {} stores {}-dimensional vectors",
            loaded.path.display(),
            loaded.feature_dim(),
            features_path.display(),
            dim
        )));
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let map = config_map(args.config.as_deref(), EVAL_KEYS)?;
    let which: String = require(args.which, &map, "which")?;
    let model_path: PathBuf = require(args.model, &map, "model")?;
    let report_path: PathBuf = require(args.report, &map, "report")?;
    let condition_given = resolve_opt::<String>(args.condition, &map, "condition")?;
    let condition: Condition = match &condition_given {
        Some(s) => s.parse()?,
        None => Condition::Original,
    };
    let seed = resolve(args.seed, &map, "seed", 0)?;
    let top_k = resolve(args.top_k, &map, "top_k", 5)?;
    let recall_k = resolve(args.recall_k, &map, "recall_k", 4)?;
    let group_size = resolve(args.group_size, &map, "group_size", 5)?;
    let append_end = args.append_end || file_value::<bool>(&map, "append_end")?.unwrap_or(false);
    let hold_period = args.hold_period || file_value::<bool>(&map, "hold_period")?.unwrap_or(false);
    let captions_path = resolve_opt::<PathBuf>(args.captions, &map, "captions")?;
    let features_path = resolve_opt::<PathBuf>(args.features, &map, "features")?;
    let benchmark_path = resolve_opt::<PathBuf>(args.benchmark, &map, "benchmark")?;
    let labels_path = resolve_opt::<PathBuf>(args.labels, &map, "labels")?;

    let loaded = load_model(&model_path)?;
    if let Some(k) = resolve_opt(args.k, &map, "k")? {
        if k != loaded.feature_dim() {
            return Err(Error::Format(format!(
                "requested K = {k} but model {} predicts {}-dimensional features",
                loaded.path.display(),
                loaded.feature_dim()
            )));
        }
    }
    let act = ActivationConfig::default();
    let hold = if hold_period { loaded.vocab.get(".") } else { None };

    let need = |path: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        path.clone().ok_or_else(|| {
            Error::Config(format!("the {which} protocol needs --{flag} (or config key {flag})"))
        })
    };

    let report = match which.as_str() {
        "similarity" => {
            if condition == Condition::Scrambled {
                return Err(Error::Config(
                    "the similarity protocol scores single words; there is no scrambled condition"
                        .into(),
                ));
            }
            let pairs = data::load_benchmark(&need(&benchmark_path, "benchmark")?)?;
            let out = eval::word_similarity(&pairs, |w| match loaded.vocab.get(w) {
                None => Ok(None),
                Some(id) => loaded.similarity_vector(id).map(Some),
            })?;
            println!(
                "similarity rho {} over {} of {} benchmark pairs",
                out.rho, out.covered, out.total
            );
            EvalReport {
                metric: "similarity_rho".to_string(),
                condition: "n/a",
                value: out.rho,
                n_queries: out.covered,
                n_candidates: out.total,
                seed,
            }
        }
        "retrieval" => {
            let captions = data::load_caption_lines(&need(&captions_path, "captions")?)?;
            let fpath = need(&features_path, "features")?;
            let (dim, features) = data::load_features(&fpath)?;
            check_feature_dim(&loaded, dim, &fpath)?;
            let (records, dropped) =
                data::join_captions_features(&captions, &features, &loaded.vocab);
            if dropped > 0 {
                eprintln!("warning: dropped {dropped} captions without a feature vector");
            }
            if records.is_empty() {
                return Err(Error::Format(
                    "no caption id matches a feature id; are these files from the same corpus?"
                        .into(),
                ));
            }
            let out = eval::image_retrieval(
                &records,
                &features,
                |tokens| loaded.predict(tokens, &act),
                top_k,
                condition,
                seed,
                hold,
            )?;
            if out.excluded > 0 {
                eprintln!("warning: excluded {} zero-norm candidate vectors", out.excluded);
            }
            println!(
                "retrieval accuracy@{top_k} [{}] = {} over {} queries, {} candidates",
                condition.name(),
                out.accuracy,
                out.n_queries,
                out.n_candidates
            );
            EvalReport {
                metric: format!("retrieval_acc@{top_k}"),
                condition: condition.name(),
                value: out.accuracy,
                n_queries: out.n_queries,
                n_candidates: out.n_candidates,
                seed,
            }
        }
        "word-retrieval" => {
            let labels = data::load_labels(&need(&labels_path, "labels")?)?;
            let fpath = need(&features_path, "features")?;
            let (dim, features) = data::load_features(&fpath)?;
            check_feature_dim(&loaded, dim, &fpath)?;
            let out = eval::single_word_retrieval(
                &labels,
                &features,
                |word| match loaded.vocab.get(word) {
                    None => Ok(None),
                    Some(id) => loaded.project(id, append_end, &act).map(Some),
                },
                top_k,
            )?;
            if out.excluded > 0 {
                eprintln!(
                    "warning: skipped {} label words outside the vocabulary",
                    out.excluded
                );
            }
            println!(
                "word retrieval accuracy@{top_k} = {} over {} words, {} candidates",
                out.accuracy, out.n_queries, out.n_candidates
            );
            EvalReport {
                metric: format!("word_retrieval_acc@{top_k}"),
                condition: "n/a",
                value: out.accuracy,
                n_queries: out.n_queries,
                n_candidates: out.n_candidates,
                seed,
            }
        }
        "paraphrase" => {
            let params = match &loaded.model {
                LoadedModel::Net(p) => p,
                LoadedModel::Linreg(_) => {
                    return Err(Error::Format(format!(
                        "paraphrase retrieval compares sentence encodings; {} holds the \
                         order-blind linear baseline, which has none",
                        loaded.path.display()
                    )))
                }
            };
            let captions = data::load_caption_lines(&need(&captions_path, "captions")?)?;
            let records: Vec<CaptionRecord> = captions
                .iter()
                .map(|(id, text)| CaptionRecord {
                    image_id: id.clone(),
                    tokens: loaded.vocab.encode(&data::tokenize(text)),
                    target: Vector::zeros(0),
                })
                .collect();
            let out = eval::paraphrase_retrieval(
                &records,
                |tokens| model::encode_visual(params, tokens, &act),
                recall_k,
                group_size,
                condition,
                seed,
                hold,
            )?;
            if out.dropped_groups > 0 {
                eprintln!(
                    "warning: dropped {} caption groups without exactly {group_size} captions",
                    out.dropped_groups
                );
            }
            println!(
                "paraphrase recall@{recall_k} [{}] = {} over {} queries, {} candidates",
                condition.name(),
                out.recall,
                out.n_queries,
                out.n_candidates
            );
            EvalReport {
                metric: format!("paraphrase_recall@{recall_k}"),
                condition: condition.name(),
                value: out.recall,
                n_queries: out.n_queries,
                n_candidates: out.n_candidates,
                seed,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown protocol {other:?}; expected retrieval, word-retrieval, similarity, or paraphrase"
            )))
        }
    };
    eval::append_report(&report_path, &report)?;
    println!("appended to {}", report_path.display());
    Ok(0)
}
