//! Command line surface for the imaginet toolkit.
//!
//! Four subcommands cover the whole workflow: `synth` writes a synthetic
//! caption/feature corpus, `train` fits a recurrent variant or the linear
//! baseline, `gradcheck` compares analytic gradients against central
//! differences, and `eval` runs the retrieval and similarity protocols.
//!
//! Every tunable resolves as: explicit flag, then config file entry, then
//! preset or built-in default. Config files are flat `key = value` text with
//! full-line `#` comments; keys are the flag names with underscores.

pub mod commands;

use clap::{Args, Parser, Subcommand};
use imaginet::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Exit code for a gradient check that ran but found errors over tolerance.
pub const EXIT_GRADCHECK_FAILED: i32 = 4;

/// Maps an error to its exit code: 2 for configuration problems, 3 for
/// numerical failures, 5 for artifacts that do not fit together, 1 for
/// everything else. Success is 0 and a failed gradient check is 4.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        Error::Format(_) | Error::Shape { .. } | Error::Vocab { .. } => 5,
        _ => 1,
    }
}

#[derive(Parser)]
#[command(
    name = "imaginet",
    version,
    about = "Train and evaluate grounded-language models on caption/feature data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic caption/feature corpus.
    Synth(SynthArgs),
    /// Train a recurrent variant or the linear baseline.
    Train(TrainArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Run an evaluation protocol and append a report row.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory for the generated corpus files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Named defaults bundle; only "desk" exists.
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub attributes: Option<usize>,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    #[arg(long)]
    pub val_scenes: Option<usize>,
    /// Feature vector dimension.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub order_signal_strength: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// One of visual, textual, multitask, linreg.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Checkpoint path; per-epoch snapshots get ".epochN" appended and each
    /// checkpoint gets a ".vocab" sidecar.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Loss curve TSV; defaults to the checkpoint path plus ".loss.tsv".
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Textual loss weight; defaults to the variant's own value.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Expected feature dimension; checked against the features file.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Words below this corpus count map to the unknown token.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Global gradient norm cap; unset means no clipping.
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// Ridge strength for linreg; unset selects from a small grid on an
    /// internal validation split.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub sentence_len: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub samples_per_tensor: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed loss mix; by default instances cycle through the variants.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Test hook: corrupt the analytic gradients before comparing, which
    /// must drive the check to failure.
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Protocol: retrieval, word-retrieval, similarity, or paraphrase.
    #[arg(long)]
    pub which: Option<String>,
    /// Model checkpoint; recurrent and baseline files are told apart by
    /// their magic bytes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report TSV to append to.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Gold word-pair similarities for the similarity protocol.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Image labels for single-word retrieval.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// original or scrambled.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub recall_k: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Expected feature dimension; checked against the loaded artifacts.
    #[arg(long)]
    pub k: Option<usize>,
    /// Append the end sentinel to single-word inputs before projecting.
    #[arg(long)]
    pub append_end: bool,
    /// Keep a terminal period in place when scrambling.
    #[arg(long)]
    pub hold_period: bool,
}

/// Runs a parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
        Command::Eval(args) => commands::cmd_eval(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parsed config file: flat `key = value` lines, `#` comments, no sections.
pub(crate) type ConfigMap = BTreeMap<String, String>;

/// Loads and validates a config file against the keys a command accepts.
pub(crate) fn config_map(path: Option<&Path>, allowed: &[&str]) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key = value, got {line:?}",
                path.display(),
                i + 1
            )));
        };
        let key = key.trim().to_string();
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{}:{}: unknown config key {key:?}",
                path.display(),
                i + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "{}:{}: duplicate config key {key:?}",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(map)
}

/// Typed read of one config file entry.
pub(crate) fn file_value<T>(map: &ConfigMap, key: &str) -> Result<Option<T>>
where
    T: std::str::FromStr,
{
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            Error::Config(format!(
                "config key {key}: cannot parse {raw:?} as {}",
                std::any::type_name::<T>()
            ))
        }),
    }
}

/// Flag, then config file, then default.
pub(crate) fn resolve<T>(flag: Option<T>, map: &ConfigMap, key: &str, default: T) -> Result<T>
where
    T: std::str::FromStr,
{
    Ok(flag.or(file_value(map, key)?).unwrap_or(default))
}

/// Flag, then config file, for settings without a default.
pub(crate) fn resolve_opt<T>(flag: Option<T>, map: &ConfigMap, key: &str) -> Result<Option<T>>
where
    T: std::str::FromStr,
{
    Ok(flag.or(file_value(map, key)?))
}

/// Flag, then config file, erroring when a required setting is absent.
pub(crate) fn require<T>(flag: Option<T>, map: &ConfigMap, key: &str) -> Result<T>
where
    T: std::str::FromStr,
{
    resolve_opt(flag, map, key)?.ok_or_else(|| {
        Error::Config(format!(
            "missing required setting: pass --{} or config key {key}",
            key.replace('_', "-")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_files_parse_and_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# a comment\nepochs = 3\nlr=0.01\n").unwrap();
        let map = config_map(Some(&path), &["epochs", "lr"]).unwrap();
        assert_eq!(file_value::<usize>(&map, "epochs").unwrap(), Some(3));
        assert_eq!(file_value::<f64>(&map, "lr").unwrap(), Some(0.01));

        std::fs::write(&path, "epocsh = 3\n").unwrap();
        assert!(matches!(
            config_map(Some(&path), &["epochs"]),
            Err(Error::Config(_))
        ));

        std::fs::write(&path, "epochs = 3\nepochs = 4\n").unwrap();
        assert!(matches!(
            config_map(Some(&path), &["epochs"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn flags_outrank_the_file_which_outranks_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "epochs = 3\n").unwrap();
        let map = config_map(Some(&path), &["epochs", "lr"]).unwrap();
        assert_eq!(resolve(Some(9usize), &map, "epochs", 8).unwrap(), 9);
        assert_eq!(resolve(None, &map, "epochs", 8).unwrap(), 3);
        assert_eq!(resolve::<f64>(None, &map, "lr", 2e-4).unwrap(), 2e-4);
    }

    #[test]
    fn bad_config_values_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "epochs = soon\n").unwrap();
        let map = config_map(Some(&path), &["epochs"]).unwrap();
        match file_value::<usize>(&map, "epochs") {
            Err(Error::Config(msg)) => assert!(msg.contains("epochs"), "got {msg}"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_required_settings_name_both_spellings() {
        let map = ConfigMap::new();
        match require::<String>(None, &map, "loss_log") {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("--loss-log"), "got {msg}");
                assert!(msg.contains("loss_log"), "got {msg}");
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn exit_codes_follow_the_error_family() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::Format("x".into())), 5);
        assert_eq!(
            exit_code(&Error::Vocab { token: 9, vocab_size: 3 }),
            5
        );
        assert_eq!(exit_code(&Error::Data("x".into())), 1);
    }
}
