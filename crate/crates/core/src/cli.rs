//! Command-line front end.
//!
//! Settings come from an optional TOML file overridden by flags. Every
//! artifact is a JSON envelope carrying the resolved configuration and a
//! format tag, written under `<out>/<command>/<tag>/`; `<out>/<command>/latest`
//! holds the most recent tag. Exit codes: 0 success, 1 contract violation or
//! divergence, 2 configuration or input error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::complexity::{
    complexity_lower_bound, complexity_reported_upper, estimate_complexity, ComplexityEstimate,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{
    correlate_records, default_model, read_records_csv, records_to_csv, run_correlation_experiment,
    CorrelationReport, SyntheticDataSpec, TrainConfig,
};
use crate::fitdiag::{fit_report, FitReport};
use crate::model::{Checkpoint, ModelSpec};
use crate::prob::RngSeed;
use crate::risk::{dataset_posterior, LossSpec, DEFAULT_CLIP};
use crate::verify::{run_suite, Suite, VerifyConfig, VerifyReport};

pub const OUTPUT_FORMAT: &str = "infobound-run/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "infobound",
    version,
    about = "Information-theoretic generalization and fitting diagnostics"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides trial and sample counts.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Print the full JSON envelope on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    ClippedCrossEntropy,
    ZeroOne,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run property suites for the lemmas and bounds.
    Verify {
        #[arg(long, value_enum)]
        suite: Option<Suite>,
    },
    /// Estimate the task complexity of a labeled dataset.
    Complexity {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        prior_alpha: Option<f64>,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Fitting diagnostics of a checkpoint on a dataset.
    Diagnose {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossKind>,
        #[arg(long)]
        l_max: Option<f64>,
    },
    /// Train on synthetic data and correlate accuracy with the diagnostics.
    Train {
        /// Comma-separated seeds for batch mode.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recompute correlations from an epoch-record CSV.
    Correlate {
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub suite: Suite,
    pub settings: VerifyConfig,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            settings: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySection {
    pub dataset: Option<PathBuf>,
    pub prior_alpha: f64,
    pub num_samples: usize,
    pub num_classes: Option<usize>,
}

impl Default for ComplexitySection {
    fn default() -> Self {
        Self {
            dataset: None,
            prior_alpha: 1.0,
            num_samples: 100_000,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub loss: LossSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Batch mode seeds; empty means the global seed only.
    pub seeds: Vec<u64>,
    pub data: SyntheticDataSpec,
    /// Defaults to a 16-unit tanh hidden layer sized to the data.
    pub model: Option<ModelSpec>,
    /// Its `seed` is replaced by each run seed.
    pub optimizer: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSection {
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Output subdirectory name; defaults to `seed-<seed>`.
    pub tag: Option<String>,
    pub jobs: Option<usize>,
    pub verify: VerifySection,
    pub complexity: ComplexitySection,
    pub diagnose: DiagnoseSection,
    pub train: TrainSection,
    pub correlate: CorrelateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            tag: None,
            jobs: None,
            verify: VerifySection::default(),
            complexity: ComplexitySection::default(),
            diagnose: DiagnoseSection::default(),
            train: TrainSection::default(),
            correlate: CorrelateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Folds command-line flags into the file settings.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut c = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        if let Some(o) = &cli.out {
            c.out = o.clone();
        }
        if cli.jobs.is_some() {
            c.jobs = cli.jobs;
        }
        if let Some(t) = cli.trials {
            c.verify.settings = c.verify.settings.with_trials(t);
            c.complexity.num_samples = t;
        }
        match &cli.command {
            Command::Verify { suite } => {
                if let Some(s) = suite {
                    c.verify.suite = *s;
                }
            }
            Command::Complexity {
                dataset,
                prior_alpha,
                num_samples,
                num_classes,
            } => {
                let s = &mut c.complexity;
                if dataset.is_some() {
                    s.dataset = dataset.clone();
                }
                if let Some(a) = prior_alpha {
                    s.prior_alpha = *a;
                }
                if let Some(n) = num_samples {
                    s.num_samples = *n;
                }
                if num_classes.is_some() {
                    s.num_classes = *num_classes;
                }
            }
            Command::Diagnose {
                checkpoint,
                dataset,
                loss,
                l_max,
            } => {
                let s = &mut c.diagnose;
                if checkpoint.is_some() {
                    s.checkpoint = checkpoint.clone();
                }
                if dataset.is_some() {
                    s.dataset = dataset.clone();
                }
                if let Some(kind) = loss {
                    s.loss = match kind {
                        LossKind::SoftmaxCrossEntropy => LossSpec::SoftmaxCrossEntropy,
                        LossKind::ClippedCrossEntropy => LossSpec::ClippedCrossEntropy {
                            l_max: l_max.unwrap_or(DEFAULT_CLIP),
                        },
                        LossKind::ZeroOne => LossSpec::ZeroOne,
                    };
                }
            }
            Command::Train { seeds, epochs } => {
                if let Some(s) = seeds {
                    c.train.seeds = s.clone();
                }
                if let Some(e) = epochs {
                    c.train.optimizer.epochs = *e;
                }
            }
            Command::Correlate { records } => {
                if records.is_some() {
                    c.correlate.records = records.clone();
                }
            }
        }
        Ok(c)
    }

    pub fn tag(&self) -> String {
        self.tag
            .clone()
            .unwrap_or_else(|| format!("seed-{}", self.seed))
    }
}

/// Every JSON artifact.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub format_version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub result: T,
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Verify { .. } => "verify",
        Command::Complexity { .. } => "complexity",
        Command::Diagnose { .. } => "diagnose",
        Command::Train { .. } => "train",
        Command::Correlate { .. } => "correlate",
    }
}

/// Creates `<out>/<command>/<tag>/` and points `latest` at it.
fn run_dir(config: &RunConfig, command: &str) -> Result<PathBuf> {
    let base = config.out.join(command);
    let dir = base.join(config.tag());
    fs::create_dir_all(&dir)?;
    fs::write(base.join("latest"), format!("{}\n", config.tag()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, &text)?;
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityOutput {
    pub n: u64,
    pub alphabet_size: usize,
    pub prior_alpha: f64,
    pub estimate: ComplexityEstimate,
    pub closed_form: f64,
    pub lower_bound: f64,
    /// Reported, never asserted; `None` unless every count is positive.
    pub reported_upper: Option<f64>,
    /// Heuristic regularization scale `√C`.
    pub suggested_regularization_multiplier: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub runs: Vec<CorrelationReport>,
    pub record_files: Vec<String>,
}

struct Outcome {
    stdout: String,
    code: i32,
}

fn ok(stdout: String) -> Outcome {
    Outcome {
        stdout,
        code: EXIT_OK,
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("missing {what} path (flag or config file)")))
}

fn cmd_verify(config: &RunConfig, json: bool) -> Result<Outcome> {
    let report: VerifyReport = run_suite(
        config.verify.suite,
        &config.verify.settings,
        RngSeed(config.seed),
    )?;
    let dir = run_dir(config, "verify")?;
    let env = Envelope {
        format_version: OUTPUT_FORMAT,
        command: "verify",
        config,
        result: &report,
    };
    let text = write_json(&dir.join("report.json"), &env)?;
    if let Some(g) = &report.gen_bound {
        fs::write(dir.join("gen_bound.csv"), g.to_csv())?;
    }
    let stdout = if json {
        text
    } else {
        let mut s = String::new();
        for c in &report.checks {
            s += &format!(
                "{} {:<32} worst={:.6e} tol={:.1e} trials={}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.worst,
                c.tolerance,
                c.trials
            );
        }
        if report.low_trials_warning {
            s += "warning: trial counts below 1000; Monte-Carlo comparisons are unreliable\n";
        }
        s += &format!(
            "{}\n",
            if report.passed {
                "all checks passed"
            } else {
                "contract violated"
            }
        );
        s
    };
    Ok(Outcome {
        stdout,
        code: if report.passed {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        },
    })
}

fn cmd_complexity(config: &RunConfig, json: bool) -> Result<Outcome> {
    let s = &config.complexity;
    let data = Dataset::read_csv(require(&s.dataset, "dataset")?, s.num_classes)?;
    let post = dataset_posterior(&data, s.prior_alpha)?;
    let estimate = estimate_complexity(&post, s.num_samples, RngSeed(config.seed))?;
    let out = ComplexityOutput {
        n: post.n(),
        alphabet_size: post.alphabet_size(),
        prior_alpha: s.prior_alpha,
        closed_form: estimate.closed_form,
        lower_bound: complexity_lower_bound(&post),
        reported_upper: complexity_reported_upper(&post),
        suggested_regularization_multiplier: estimate.closed_form.max(0.0).sqrt(),
        estimate,
    };
    let dir = run_dir(config, "complexity")?;
    let env = Envelope {
        format_version: OUTPUT_FORMAT,
        command: "complexity",
        config,
        result: &out,
    };
    let text = write_json(&dir.join("complexity.json"), &env)?;
    Ok(ok(if json {
        text
    } else {
        format!(
            "n={} |Z|={}\nclosed_form={}\nmonte_carlo={} ± {}\nlower_bound={}\nsuggested_regularization_multiplier={} (heuristic)\n",
            out.n,
            out.alphabet_size,
            out.closed_form,
            out.estimate.mean,
            out.estimate.std_error,
            out.lower_bound,
            out.suggested_regularization_multiplier
        )
    }))
}

fn cmd_diagnose(config: &RunConfig, json: bool) -> Result<Outcome> {
    let s = &config.diagnose;
    let checkpoint = Checkpoint::load(require(&s.checkpoint, "checkpoint")?)?;
    let (spec, theta) = checkpoint.into_parts()?;
    let data = Dataset::read_csv(require(&s.dataset, "dataset")?, Some(spec.num_classes))?;
    if data.input_dim() != spec.input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features, checkpoint expects {}",
            data.input_dim(),
            spec.input_dim
        )));
    }
    let report: FitReport = fit_report(&spec, &theta, &data, &s.loss)?;
    let dir = run_dir(config, "diagnose")?;
    let env = Envelope {
        format_version: OUTPUT_FORMAT,
        command: "diagnose",
        config,
        result: &report,
    };
    let text = write_json(&dir.join("fit_report.json"), &env)?;
    fs::write(dir.join("per_input.csv"), report.rows_csv())?;
    let holds = report.fit_normalized <= report.bound + 1e-9;
    Ok(Outcome {
        stdout: if json {
            text
        } else {
            format!(
                "fit={} fit_normalized={} bound={} lambda_max_max={}\n",
                report.fit, report.fit_normalized, report.bound, report.lambda_max_max
            )
        },
        code: if holds { EXIT_OK } else { EXIT_VIOLATION },
    })
}

fn cmd_train(config: &RunConfig, json: bool) -> Result<Outcome> {
    let t = &config.train;
    let model = t.model.clone().unwrap_or_else(|| default_model(&t.data));
    model.validate()?;
    t.data.validate()?;
    t.optimizer.validate()?;
    let seeds = if t.seeds.is_empty() {
        vec![config.seed]
    } else {
        t.seeds.clone()
    };
    let dir = run_dir(config, "train")?;
    let mut runs = Vec::new();
    let mut files = Vec::new();
    let mut stdout = String::new();
    for &seed in &seeds {
        let records_name = format!("records-{seed}.csv");
        match run_correlation_experiment(&model, &t.optimizer, &t.data, RngSeed(seed)) {
            Ok(run) => {
                fs::write(dir.join(&records_name), &run.records_csv)?;
                let env = Envelope {
                    format_version: OUTPUT_FORMAT,
                    command: "train",
                    config,
                    result: &run.report,
                };
                write_json(&dir.join(format!("report-{seed}.json")), &env)?;
                Checkpoint::new(model.clone(), &run.run.theta, Some(RngSeed(seed)))
                    .save(dir.join(format!("checkpoint-{seed}.json")))?;
                let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |v| format!("{v:.4}"));
                stdout += &format!(
                    "seed {seed}: final accuracy {:.4}, r(acc, F) = {}, r(acc, G) = {}{}\n",
                    run.run.records.last().map_or(0.0, |r| r.test_accuracy),
                    fmt(run.report.r_accuracy_f),
                    fmt(run.report.r_accuracy_g),
                    if run.report.unstable {
                        " (unstable)"
                    } else {
                        ""
                    }
                );
                runs.push(run.report);
                files.push(records_name);
            }
            Err(Error::Diverged { epoch, records }) => {
                fs::write(dir.join(&records_name), records_to_csv(&records)?)?;
                return Ok(Outcome {
                    stdout: format!(
                        "seed {seed}: diverged at epoch {epoch}; partial records kept\n"
                    ),
                    code: EXIT_VIOLATION,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let summary = TrainSummary {
        runs,
        record_files: files,
    };
    let env = Envelope {
        format_version: OUTPUT_FORMAT,
        command: "train",
        config,
        result: &summary,
    };
    let text = write_json(&dir.join("summary.json"), &env)?;
    Ok(ok(if json { text } else { stdout }))
}

fn cmd_correlate(config: &RunConfig, json: bool) -> Result<Outcome> {
    let records = read_records_csv(require(&config.correlate.records, "records")?)?;
    let report = correlate_records(&records, &config.train.optimizer, RngSeed(config.seed))?;
    let dir = run_dir(config, "correlate")?;
    let env = Envelope {
        format_version: OUTPUT_FORMAT,
        command: "correlate",
        config,
        result: &report,
    };
    let text = write_json(&dir.join("correlation.json"), &env)?;
    Ok(ok(if json {
        text
    } else {
        format!(
            "r(acc, F) = {:?}, r(acc, G) = {:?}, tail from epoch {} ({} epochs)\n",
            report.r_accuracy_f, report.r_accuracy_g, report.tail_start_epoch, report.tail_len
        )
    }))
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Validation(_)
        | Error::Dimension { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_VIOLATION,
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let config = RunConfig::resolve(cli)?;
    let run = || match &cli.command {
        Command::Verify { .. } => cmd_verify(&config, cli.json),
        Command::Complexity { .. } => cmd_complexity(&config, cli.json),
        Command::Diagnose { .. } => cmd_diagnose(&config, cli.json),
        Command::Train { .. } => cmd_train(&config, cli.json),
        Command::Correlate { .. } => cmd_correlate(&config, cli.json),
    };
    match config.jobs {
        Some(0) => Err(Error::Config("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(outcome) => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = std::io::Write::write_all(&mut std::io::stdout(), outcome.stdout.as_bytes());
            outcome.code
        }
        Err(e) => {
            eprintln!("infobound {}: {e}", command_name(&cli.command));
            exit_code(&e)
        }
    }
}
