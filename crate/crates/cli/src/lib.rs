//! Subcommand dispatch for the `deepris` binary.
//!
//! Commands: `generate`, `train`, `eval`, `sweep`, `complexity`. Every
//! command resolves a [`RunConfig`] from `--config <file>` plus
//! `--<key> <value>` overrides, echoes the resolved configuration to
//! stderr for provenance, and writes outputs atomically.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 numeric or validation failure.

pub mod dataset_io;

use deepris::config::{parse_config, ConfigError, RunConfig};
use deepris::eval::{
    complexity_report, fig2_scenarios, learning_rate_study, parse_scenario_file,
    run_scenario_suite, write_csv, DeepRisDetector, EvalError,
};
use deepris::training::{
    generate_dataset, load_checkpoint, save_checkpoint, train, Checkpoint, CheckpointError,
    TrainError, TrainHistory,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Exit code for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for I/O errors.
pub const EXIT_IO: i32 = 3;
/// Exit code for numeric or validation failures.
pub const EXIT_FAILURE: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Io(std::io::Error),
    Checkpoint(CheckpointError),
    Train(TrainError),
    Eval(EvalError),
    Dataset(dataset_io::DatasetFileError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Checkpoint(e) => write!(f, "checkpoint error: {e}"),
            CliError::Train(e) => write!(f, "training error: {e}"),
            CliError::Eval(e) => write!(f, "evaluation error: {e}"),
            CliError::Dataset(e) => write!(f, "dataset file error: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Config(ConfigError::Io(_)) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Checkpoint(CheckpointError::Io(e)) if is_io_like(e) => EXIT_IO,
            CliError::Checkpoint(_) => EXIT_FAILURE,
            CliError::Train(_) => EXIT_FAILURE,
            CliError::Eval(EvalError::Io(_)) => EXIT_IO,
            CliError::Eval(_) => EXIT_FAILURE,
            CliError::Dataset(dataset_io::DatasetFileError::Io(_)) => EXIT_IO,
            CliError::Dataset(_) => EXIT_FAILURE,
        }
    }
}

fn is_io_like(_e: &std::io::Error) -> bool {
    true
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e)
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}
impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}
impl From<dataset_io::DatasetFileError> for CliError {
    fn from(e: dataset_io::DatasetFileError) -> Self {
        CliError::Dataset(e)
    }
}

const USAGE: &str = "\
usage: deepris <command> [--config FILE] [--KEY VALUE ...] [command flags]

commands:
  generate    --out PATH [--size N]            synthesize a training dataset
  train       --data PATH --out PATH           train the detector
              [--history PATH]
  eval        --checkpoint PATH --out PATH     measure BER curves
              [--scenarios PATH]               (default: built-in suite)
  sweep       --data PATH --etas LIST          learning-rate study
              --out PATH
  complexity  [--dims LIST] [--k N] [--t N]    multiply-count report

Any --KEY VALUE pair matching a configuration key overrides the config
file, which overrides the DEEPRIS_SEED environment variable and the
built-in defaults.";

/// Flags consumed by commands rather than the configuration.
const COMMAND_FLAGS: &[&str] = &[
    "config",
    "out",
    "size",
    "data",
    "history",
    "checkpoint",
    "scenarios",
    "etas",
    "dims",
    "k",
    "t",
];

struct ParsedArgs {
    command: String,
    command_flags: Vec<(String, String)>,
    config_file: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

impl ParsedArgs {
    fn flag(&self, name: &str) -> Option<&str> {
        self.command_flags
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn required(&self, name: &str) -> Result<&str, CliError> {
        self.flag(name)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }
}

fn parse_args(args: &[String]) -> Result<ParsedArgs, CliError> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage("no command given".into()))?
        .clone();
    let mut command_flags = Vec::new();
    let mut config_file = None;
    let mut overrides = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected a --flag, got '{}'", args[i])))?
            .to_string();
        let value = args
            .get(i + 1)
            .ok_or_else(|| CliError::Usage(format!("flag --{key} needs a value")))?
            .clone();
        if key == "config" {
            config_file = Some(PathBuf::from(&value));
        } else if COMMAND_FLAGS.contains(&key.as_str()) {
            command_flags.push((key, value));
        } else {
            overrides.push((key, value));
        }
        i += 2;
    }
    Ok(ParsedArgs {
        command,
        command_flags,
        config_file,
        overrides,
    })
}

fn echo_config(cfg: &RunConfig) {
    eprintln!("# resolved configuration");
    for line in cfg.canonical_lines() {
        eprintln!("# {line}");
    }
    eprintln!("# config_digest={:016x}", cfg.digest());
}

fn parse_f64_list(name: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad value '{s}' in --{name}")))
        })
        .collect()
}

fn parse_u64_list(name: &str, value: &str) -> Result<Vec<u64>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::Usage(format!("bad value '{s}' in --{name}")))
        })
        .collect()
}

fn parse_u64_flag(name: &str, value: &str) -> Result<u64, CliError> {
    value
        .parse::<u64>()
        .map_err(|_| CliError::Usage(format!("bad value '{value}' for --{name}")))
}

/// Runs one invocation; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("deepris: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let parsed = parse_args(args)?;
    let cfg = parse_config(parsed.config_file.as_deref(), &parsed.overrides)?;
    echo_config(&cfg);
    match parsed.command.as_str() {
        "generate" => cmd_generate(&parsed, &cfg),
        "train" => cmd_train(&parsed, &cfg),
        "eval" => cmd_eval(&parsed, &cfg),
        "sweep" => cmd_sweep(&parsed, &cfg),
        "complexity" => cmd_complexity(&parsed, &cfg),
        other => Err(CliError::Usage(format!("unknown command '{other}'"))),
    }
}

fn cmd_generate(parsed: &ParsedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let out = PathBuf::from(parsed.required("out")?);
    let size = match parsed.flag("size") {
        Some(v) => parse_u64_flag("size", v)? as usize,
        None => cfg.train_samples,
    };
    let dataset = generate_dataset(&cfg.gen_config(), size, cfg.seed)?;
    dataset_io::save_dataset(&out, &dataset, cfg.digest())?;
    eprintln!(
        "# wrote {} frames ({} features each) to {}",
        dataset.len(),
        dataset.feature_dim(),
        out.display()
    );
    Ok(())
}

fn cmd_train(parsed: &ParsedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let data_path = PathBuf::from(parsed.required("data")?);
    let out = PathBuf::from(parsed.required("out")?);
    let dataset = dataset_io::load_dataset(&data_path)?;
    let train_cfg = cfg.train_config();
    let (params, norm, history) = train(&dataset, &train_cfg)?;
    let checkpoint = Checkpoint {
        params,
        norm,
        modulation_order: dataset.meta.modulation_order,
        frame_len: dataset.meta.frame_len,
        train_config: train_cfg,
        gen_digest: cfg.digest(),
    };
    save_checkpoint(&out, &checkpoint)?;
    eprintln!(
        "# trained {} epochs (stop: {:?}, best epoch {}), best validation loss {}",
        history.records.len(),
        history.stop_reason,
        history.best_epoch,
        history.best_val_loss()
    );
    if let Some(history_path) = parsed.flag("history") {
        write_history_csv(
            Path::new(history_path),
            &[(history.learning_rate, history)],
            cfg,
        )?;
    }
    eprintln!("# wrote checkpoint to {}", out.display());
    Ok(())
}

fn cmd_eval(parsed: &ParsedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let checkpoint_path = PathBuf::from(parsed.required("checkpoint")?);
    let out = PathBuf::from(parsed.required("out")?);
    let checkpoint = load_checkpoint(&checkpoint_path)?;
    let detector = DeepRisDetector::from_checkpoint(&checkpoint)?;
    let scenarios = match parsed.flag("scenarios") {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            parse_scenario_file(&text)?
        }
        None => fig2_scenarios(cfg),
    };
    let curves = run_scenario_suite(&detector, &scenarios, &cfg.stop_rule(), cfg.seed)?;
    write_csv(&curves, &out, cfg.digest(), cfg.seed)?;
    eprintln!(
        "# wrote {} curves ({} scenarios) to {}",
        curves.len(),
        scenarios.len(),
        out.display()
    );
    Ok(())
}

fn cmd_sweep(parsed: &ParsedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let data_path = PathBuf::from(parsed.required("data")?);
    let etas = parse_f64_list("etas", parsed.required("etas")?)?;
    let out = PathBuf::from(parsed.required("out")?);
    if etas.is_empty() {
        return Err(CliError::Usage("--etas list is empty".into()));
    }
    let dataset = dataset_io::load_dataset(&data_path)?;
    let histories = learning_rate_study(&dataset, &etas, &cfg.train_config())?;
    write_history_csv(&out, &histories, cfg)?;
    eprintln!("# wrote {} learning-rate histories to {}", etas.len(), out.display());
    Ok(())
}

fn cmd_complexity(parsed: &ParsedArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let dims: Vec<u64> = match parsed.flag("dims") {
        Some(v) => parse_u64_list("dims", v)?,
        None => {
            // trained architecture: hidden widths plus the output width
            let mut d: Vec<u64> = cfg.hidden_dims.iter().map(|&x| x as u64).collect();
            d.push(2 * cfg.frame_len as u64);
            d
        }
    };
    let k = match parsed.flag("k") {
        Some(v) => parse_u64_flag("k", v)?,
        None => cfg.max_epochs as u64,
    };
    let t = match parsed.flag("t") {
        Some(v) => parse_u64_flag("t", v)?,
        None => cfg.train_samples as u64,
    };
    let report = complexity_report(&dims, k, t)?;
    let counts: Vec<String> = report.node_counts.iter().map(|c| c.to_string()).collect();
    println!("node_counts={}", counts.join(","));
    println!("iterations={k}");
    println!("samples={t}");
    println!("inference_multiplies={}", report.inference_multiplies);
    println!("training_multiplies={}", report.training_multiplies);
    Ok(())
}

fn write_history_csv(
    path: &Path,
    histories: &[(f64, TrainHistory)],
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let mut text = String::new();
    let _ = writeln!(text, "# deepris training histories");
    let _ = writeln!(text, "# config_digest={:016x}", cfg.digest());
    let _ = writeln!(text, "# seed={}", cfg.seed);
    let _ = writeln!(text, "eta,epoch,train_loss,val_loss,stop_reason,best_epoch");
    for (eta, history) in histories {
        let stop = match history.stop_reason {
            deepris::training::StopReason::Patience => "patience",
            deepris::training::StopReason::MaxEpochs => "max_epochs",
        };
        for r in &history.records {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{}",
                eta, r.epoch, r.train_loss, r.val_loss, stop, history.best_epoch
            );
        }
    }
    deepris::config::write_atomic(path, text.as_bytes())?;
    Ok(())
}
