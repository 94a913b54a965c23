//! Command-line front end. Every command prints one JSON document on
//! stdout; diagnostics go to stderr.
//!
//! Exit codes: 0 success (and fair), 1 a counterexample was found, 2 usage
//! or input error, 3 a resource limit kept the verdict open.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::data::{accuracy, load_and_preprocess, load_points, positivity_rate, split, Dataset, Schema};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::property::{CounterexamplePair, FairnessProperty};
use crate::synth::{self, SyntheticKind};
use crate::training::{train, Regularizer, TrainingConfig};
use crate::verifier::{certify, verify_local, SearchLimits, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNFAIR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

/// Environment variable that replaces every configured seed.
pub const SEED_ENV: &str = "CERTIFAIR_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "certifair",
    version,
    about = "Certified individual fairness for ReLU tabular classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier, optionally with a fairness regularizer.
    Train(TrainArgs),
    /// Verify global individual fairness on every partition of the property.
    Certify(CertifyArgs),
    /// Verify local fairness around each point of a CSV file.
    VerifyLocal(VerifyLocalArgs),
    /// Report accuracy and positivity rate of a model on a dataset.
    Eval(EvalArgs),
    /// Write a synthetic dataset with matching schema, property and config.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub property: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
    /// Held-out test set; without it `--data` is split by `train_fraction`.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub certify_each_epoch: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = SearchLimits::default().max_nodes)]
    pub max_nodes: usize,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
}

impl SearchArgs {
    fn limits(&self) -> Result<SearchLimits> {
        if let Some(t) = self.timeout_secs {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::config("--timeout-secs must be a non-negative number"));
            }
        }
        Ok(SearchLimits {
            max_nodes: self.max_nodes,
            timeout_secs: self.timeout_secs,
        })
    }
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub property: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Labelled data for the accuracy and positivity columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyLocalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub property: PathBuf,
    /// CSV of points; the label column is optional.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 3000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            // a partition count above the cap also lands here
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn execute(command: &Command, out: &mut dyn Write) -> Result<i32> {
    let seed = seed_override()?;
    match command {
        Command::Train(a) => cmd_train(a, seed, out),
        Command::Certify(a) => cmd_certify(a, out),
        Command::VerifyLocal(a) => cmd_verify_local(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Synth(a) => cmd_synth(a, seed, out),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::config(format!("{SEED_ENV}: {e}"))),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_model(path: &Path, schema: &Schema) -> Result<Network> {
    let net = Network::load(path)?;
    if net.input_dim() != schema.width() {
        return Err(Error::config(format!(
            "{}: model takes {} inputs but the schema encodes {}",
            path.display(),
            net.input_dim(),
            schema.width()
        )));
    }
    Ok(net)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let schema = Schema::load(&a.schema)?;
    let prop = FairnessProperty::load(&a.property, &schema)?;
    let mut cfg = TrainingConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.certify_each_epoch |= a.certify_each_epoch;
    let data = load_and_preprocess(&a.data, &schema)?;
    let (train_ds, test_ds) = match &a.test_data {
        Some(p) => (data, load_and_preprocess(p, &schema)?),
        None => split(&data, cfg.train_fraction, cfg.seed)?,
    };
    let (net, history) = train(&train_ds, &test_ds, &prop, &schema, &cfg)?;
    net.save(&a.out_model)?;
    write_file(&a.history, &history.to_csv())?;
    let (acc, pos) = if test_ds.is_empty() {
        (None, None)
    } else {
        (Some(accuracy(&net, &test_ds)?), Some(positivity_rate(&net, &test_ds)?))
    };
    emit(
        out,
        &json!({
            "test_accuracy_pct": acc,
            "positivity_rate_pct": pos,
            "train_rows": train_ds.len(),
            "test_rows": test_ds.len(),
            "epochs": cfg.epochs,
            "seed": cfg.seed,
        }),
    )?;
    Ok(EXIT_OK)
}

fn verdict_code(unfair: usize, resource_limit: usize) -> i32 {
    if unfair > 0 {
        EXIT_UNFAIR
    } else if resource_limit > 0 {
        EXIT_RESOURCE
    } else {
        EXIT_OK
    }
}

fn cmd_certify(a: &CertifyArgs, out: &mut dyn Write) -> Result<i32> {
    if a.jobs == 0 {
        return Err(Error::config("--jobs must be at least 1"));
    }
    let schema = Schema::load(&a.schema)?;
    let prop = FairnessProperty::load(&a.property, &schema)?;
    let net = load_model(&a.model, &schema)?;
    let data = a.data.as_deref().map(|p| load_and_preprocess(p, &schema)).transpose()?;
    let report = certify(&net, &prop, &schema, a.search.limits()?, a.jobs, data.as_ref())?;
    write_file(&a.report, &(report.to_json() + "\n"))?;
    emit(
        out,
        &json!({
            "certified_global_fairness_pct": report.certified_global_fairness_pct,
            "accuracy_pct": report.accuracy_pct,
            "positivity_rate_pct": report.positivity_rate_pct,
            "total_partitions": report.total_partitions,
            "fair": report.fair,
            "unfair": report.unfair,
            "resource_limit": report.resource_limit,
        }),
    )?;
    Ok(verdict_code(report.unfair, report.resource_limit))
}

#[derive(Debug, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexamplePair>,
    pub nodes: usize,
}

#[derive(Debug, Serialize)]
pub struct LocalReport {
    /// Share of checked (non-skipped) points proven locally fair.
    pub certified_local_fairness_pct: f64,
    pub total: usize,
    pub fair: usize,
    pub unfair: usize,
    pub resource_limit: usize,
    /// Points outside the property's domain.
    pub skipped: usize,
    pub points: Vec<PointReport>,
}

fn cmd_verify_local(a: &VerifyLocalArgs, out: &mut dyn Write) -> Result<i32> {
    let schema = Schema::load(&a.schema)?;
    let prop = FairnessProperty::load(&a.property, &schema)?;
    let net = load_model(&a.model, &schema)?;
    let points = load_points(&a.points, &schema)?;
    if points.is_empty() {
        return Err(Error::input(format!("{}: no points", a.points.display())));
    }
    let limits = a.search.limits()?;
    let mut reports = Vec::new();
    let (mut fair, mut unfair, mut resource_limit, mut skipped) = (0, 0, 0, 0);
    for (index, x) in points.rows.iter().enumerate() {
        if !prop.contains(x, &schema) {
            skipped += 1;
            reports.push(PointReport {
                index,
                verdict: "skipped".into(),
                counterexample: None,
                nodes: 0,
            });
            continue;
        }
        let outcome = verify_local(&net, x, &prop, &schema, limits)?;
        let counterexample = match &outcome.verdict {
            Verdict::Fair => {
                fair += 1;
                None
            }
            Verdict::Unfair { pair } => {
                unfair += 1;
                Some(pair.clone())
            }
            Verdict::ResourceLimit { .. } => {
                resource_limit += 1;
                None
            }
        };
        reports.push(PointReport {
            index,
            verdict: outcome.verdict.label().into(),
            counterexample,
            nodes: outcome.stats.nodes,
        });
    }
    let checked = fair + unfair + resource_limit;
    let report = LocalReport {
        certified_local_fairness_pct: if checked == 0 {
            0.0
        } else {
            100.0 * fair as f64 / checked as f64
        },
        total: points.len(),
        fair,
        unfair,
        resource_limit,
        skipped,
        points: reports,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&a.report, &(text + "\n"))?;
    emit(
        out,
        &json!({
            "certified_local_fairness_pct": report.certified_local_fairness_pct,
            "total": report.total,
            "fair": fair,
            "unfair": unfair,
            "resource_limit": resource_limit,
            "skipped": skipped,
        }),
    )?;
    if checked == 0 {
        return Err(Error::input("every point lies outside the property's domain"));
    }
    Ok(verdict_code(unfair, resource_limit))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let schema = Schema::load(&a.schema)?;
    let net = load_model(&a.model, &schema)?;
    let data: Dataset = load_and_preprocess(&a.data, &schema)?;
    emit(
        out,
        &json!({
            "accuracy_pct": accuracy(&net, &data)?,
            "positivity_rate_pct": positivity_rate(&net, &data)?,
            "rows": data.len(),
        }),
    )?;
    Ok(EXIT_OK)
}

/// Training configuration the synthetic datasets are tuned for.
pub fn synthetic_config(kind: SyntheticKind) -> TrainingConfig {
    TrainingConfig {
        lambda_f: match kind {
            SyntheticKind::Biased => 0.05,
            SyntheticKind::Separated => 0.0,
        },
        regularizer: match kind {
            SyntheticKind::Biased => Regularizer::Global,
            SyntheticKind::Separated => Regularizer::None,
        },
        learning_rate: 0.01,
        epochs: 50,
        batch_size: 128,
        architecture: vec![8],
        ..TrainingConfig::default()
    }
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    if a.rows == 0 {
        return Err(Error::config("--rows must be at least 1"));
    }
    let seed = seed.unwrap_or(a.seed);
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let rows = synth::generate(a.kind, a.rows, seed);
    let data = a.out_dir.join("data.csv");
    synth::write_csv(&data, &rows)?;
    let files = [
        ("schema.json", synth::schema().to_json()),
        ("property.json", synth::property(a.kind).to_json()),
        (
            "config.json",
            serde_json::to_string_pretty(&TrainingConfig {
                seed,
                ..synthetic_config(a.kind)
            })
            .map_err(|e| Error::Internal(e.to_string()))?,
        ),
    ];
    for (name, text) in &files {
        write_file(&a.out_dir.join(name), &(text.clone() + "\n"))?;
    }
    emit(
        out,
        &json!({
            "rows": rows.len(),
            "seed": seed,
            "files": ["data.csv", "schema.json", "property.json", "config.json"],
        }),
    )?;
    Ok(EXIT_OK)
}
