//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use peft_ser::audit::{param_table, render_table};
use peft_ser::backbone::BackboneConfig;
use peft_ser::checkpoint::load_model;
use peft_ser::config::{RunConfig, SEED_ENV};
use peft_ser::data::{synth_corpus, SynthOptions};
use peft_ser::eval::{aggregate, evaluate_fold, fairness, Predictions};
use peft_ser::gradcheck::{gradcheck, GradcheckConfig};
use peft_ser::head::{HeadConfig, DEFAULT_CLASSES, DEFAULT_CONV_DIM};
use peft_ser::peft::{count_params, PeftConfig, PeftKind};
use peft_ser::pipeline::{default_grids, grid, load_dataset, run_experiment, sweep};
use peft_ser::trainer::predict;
use peft_ser::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "peft-ser",
    version,
    about = "Parameter-efficient fine-tuning for speech emotion recognition"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set data.manifest=PATH`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(m) = &self.manifest {
            overrides.push(format!(
                "data.manifest={}",
                serde_json::Value::from(m.to_string_lossy())
            ));
        }
        overrides.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replace existing reports in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus (manifest.jsonl + features/).
    SynthData {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
        #[arg(long, default_value_t = 10)]
        n_speakers: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
    },
    /// Cross-validated training; writes report.json and checkpoints/.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Also write eval.csv with one row per fold.
        #[arg(long)]
        csv: bool,
    },
    /// One training run per grid point; writes sweep.json.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
        /// PEFT kind to sweep; all default grids when omitted.
        #[arg(long)]
        kind: Option<PeftKind>,
        /// Comma-separated sizes (e, l, or r depending on the kind).
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a saved checkpoint on every utterance of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        csv: bool,
    },
    /// Trainable-parameter audit.
    CountParams {
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long, default_value = "none")]
        peft: PeftKind,
        #[arg(long, short = 'e', default_value_t = 128)]
        bottleneck: usize,
        #[arg(long, short = 'l', default_value_t = 5)]
        prompt_len: usize,
        #[arg(long, short = 'r', default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = DEFAULT_CONV_DIM)]
        conv_dim: usize,
        /// Include the frozen backbone count.
        #[arg(long)]
        all: bool,
        /// Print the full table across presets instead.
        #[arg(long)]
        table: bool,
        /// With --table, print JSON rather than text.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of the model gradient; exit 3 on failure.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        directions: usize,
    },
    /// Fairness scores for a predictions file written by `eval`.
    Fairness {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CLASSES)]
        n_classes: usize,
    },
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code. Failures print one line to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("PEFT_SER_LOG")
        .format_timestamp(None)
        .try_init();
    match execute(cli.command, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct TrainableCounts {
    peft_trainable: usize,
    head_trainable: usize,
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => match std::env::var(SEED_ENV) {
            Ok(raw) => raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}"))),
            Err(_) => Ok(0),
        },
    }
}

fn prepare_out_dir(out: &OutArgs, reports: &[&str]) -> Result<()> {
    fs::create_dir_all(&out.out_dir).map_err(|e| io_err(&out.out_dir, e))?;
    if !out.force {
        for r in reports {
            let p = out.out_dir.join(r);
            if p.exists() {
                return Err(Error::Usage(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Usage(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn print_line(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::Usage(format!("stdout: {e}")))
}

/// Runs a parsed command, writing its stdout output to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::SynthData {
            out: dir,
            n_per_class,
            n_speakers,
            seed,
            feature_dim,
        } => {
            prepare_out_dir(&dir, &["manifest.jsonl"])?;
            let corpus = synth_corpus(&SynthOptions {
                n_per_class,
                n_speakers,
                seed: seed_or_env(seed)?,
                feature_dim,
                ..Default::default()
            })?;
            let manifest = corpus.write(&dir.out_dir)?;
            print_line(out, &manifest.display().to_string())
        }
        Command::Train { run, out: dir, csv } => {
            let cfg = run.load()?;
            prepare_out_dir(&dir, &["report.json"])?;
            let examples = load_dataset(&cfg)?;
            let result = run_experiment(&cfg, &examples, Some(&dir.out_dir.join("checkpoints")))?;
            write_json(&dir.out_dir.join("config.json"), &cfg)?;
            write_json(&dir.out_dir.join("report.json"), &result.report)?;
            write_json(&dir.out_dir.join("eval.json"), &result.report.eval)?;
            write_json(&dir.out_dir.join("metadata.json"), &result.metadata)?;
            if csv {
                let folds: Vec<_> = result.report.runs.iter().map(|r| r.test.clone()).collect();
                let path = dir.out_dir.join("eval.csv");
                fs::write(&path, result.report.eval.to_csv(&folds)).map_err(|e| io_err(&path, e))?;
            }
            let e = &result.report.eval;
            print_line(
                out,
                &format!(
                    "UAR {:.2} (mean {:.2} ± {:.2} over {} runs)",
                    e.uar,
                    e.mu,
                    e.sigma,
                    e.per_fold.len()
                ),
            )
        }
        Command::Sweep {
            run,
            out: dir,
            kind,
            values,
            jobs,
        } => {
            let cfg = run.load()?;
            let points = match kind {
                Some(k) => grid(k, &values)?,
                None if values.is_empty() => {
                    let mut all = Vec::new();
                    for (k, v) in default_grids() {
                        all.extend(grid(k, &v)?);
                    }
                    all
                }
                None => return Err(Error::Usage("--values needs --kind".into())),
            };
            prepare_out_dir(&dir, &["sweep.json"])?;
            let examples = load_dataset(&cfg)?;
            let entries = sweep(&cfg, &points, &examples, jobs, Some(&dir.out_dir.join("checkpoints")))?;
            write_json(&dir.out_dir.join("sweep.json"), &entries)?;
            for e in &entries {
                let status = match (&e.report, &e.error) {
                    (Some(r), _) => format!("UAR {:.2}", r.eval.uar),
                    (None, Some(err)) => format!("failed: {err}"),
                    (None, None) => "no result".to_string(),
                };
                print_line(out, &format!("{}\t{}\t{status}", e.key, e.peft_trainable))?;
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            run,
            out: dir,
            csv,
        } => {
            let cfg = run.load()?;
            prepare_out_dir(&dir, &["eval.json"])?;
            let model = load_model(&checkpoint)?;
            let examples = load_dataset(&cfg)?;
            let preds = predict(&model, &examples)?;
            let fold = evaluate_fold(0, &preds, model.head.config().n_classes)?;
            let report = aggregate(std::slice::from_ref(&fold), Some(&preds))?;
            write_json(&dir.out_dir.join("eval.json"), &report)?;
            write_json(&dir.out_dir.join("predictions.json"), &preds)?;
            if csv {
                let path = dir.out_dir.join("eval.csv");
                fs::write(&path, report.to_csv(&[fold])).map_err(|e| io_err(&path, e))?;
            }
            print_line(out, &format!("UAR {:.2}", report.uar))
        }
        Command::CountParams {
            preset,
            peft,
            bottleneck,
            prompt_len,
            rank,
            conv_dim,
            all,
            table,
            json,
        } => {
            if table {
                let rows = param_table()?;
                let text = if json {
                    serde_json::to_string_pretty(&rows).expect("rows serialize")
                } else {
                    render_table(&rows)
                };
                return print_line(out, text.trim_end());
            }
            let bb = BackboneConfig::preset(&preset)?;
            let peft_cfg = PeftConfig {
                kind: peft,
                bottleneck,
                prompt_len,
                rank,
            };
            peft_cfg.validate()?;
            let head = HeadConfig::for_backbone(&bb).with_conv_dim(conv_dim);
            head.validate()?;
            let counts = count_params(&bb, &peft_cfg, &head);
            let text = if all {
                serde_json::to_string(&counts)
            } else {
                serde_json::to_string(&TrainableCounts {
                    peft_trainable: counts.peft_trainable,
                    head_trainable: counts.head_trainable,
                })
            }
            .expect("counts serialize");
            print_line(out, &text)
        }
        Command::Gradcheck { seed, directions } => {
            let report = gradcheck(&GradcheckConfig {
                seed: seed_or_env(seed)?,
                directions,
                ..Default::default()
            })?;
            print_line(out, &serde_json::to_string(&report).expect("report serializes"))?;
            if report.passed {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "max relative error {:.3e} exceeds {:.0e}",
                    report.max_rel_err, report.tolerance
                )))
            }
        }
        Command::Fairness { predictions, n_classes } => {
            let text =
                fs::read_to_string(&predictions).map_err(|e| Error::Data(format!("{}: {e}", predictions.display())))?;
            let p: Predictions =
                serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", predictions.display())))?;
            let scores = fairness(&p.preds, &p.labels, &p.genders, n_classes)?;
            print_line(out, &serde_json::to_string(&scores).expect("scores serialize"))
        }
    }
}
