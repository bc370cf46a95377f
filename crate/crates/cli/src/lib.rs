//! Command-line front end: dataset generation, training, prediction,
//! evaluation, join analysis and gradient checking.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sqlgnn::data::{
    evaluate, load_schemas, read_jsonl, write_jsonl, Candidate, DataError, EvalReport, Example, Prediction,
    SynthConfig, Template,
};
use sqlgnn::gnn::{reset_run_gnn_calls, run_gnn_calls};
use sqlgnn::model::{Ablations, Model, ModelConfig, ModelError, Net};
use sqlgnn::pipeline::{self, PipelineError};
use sqlgnn::schema::fixtures::schema;
use sqlgnn::schema::ValueType;
use sqlgnn::tensor::gradcheck::{check_params_with, GradReport};
use sqlgnn::tensor::{Fault, Tape, TensorError};

pub use config::RunConfig;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or checkpoint/configuration mismatch.
    Config(String),
    /// Unreadable or inconsistent input files.
    Data(String),
    /// Non-finite values or failed gradient checks.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => CliError::Numeric(t.to_string()),
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Data(d) => d.into(),
            PipelineError::Model(m) => m.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "sqlgnn", version, about = "Schema-graph text-to-SQL parser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Configuration override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Switches an ablation on; repeatable.
    #[arg(long = "ablation", value_name = "NAME", global = true)]
    pub ablation: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct Source {
    /// Dataset directory holding schemas.jsonl and <split>.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a synthetic dataset (schemas, train, dev and test files).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Total schemas, split 70/10/20 into train/dev/test.
        #[arg(long)]
        n_schemas: Option<usize>,
        #[arg(long, default_value_t = 10)]
        per_schema: usize,
        /// Explicit split sizes; all three replace --n-schemas.
        #[arg(long)]
        train_schemas: Option<usize>,
        #[arg(long)]
        dev_schemas: Option<usize>,
        #[arg(long)]
        test_schemas: Option<usize>,
        /// Comma-separated template names; default all.
        #[arg(long, value_delimiter = ',')]
        templates: Vec<String>,
    },
    /// Trains a model and writes a checkpoint and per-epoch metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with schemas.jsonl, train.jsonl and dev.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Writes beam candidates for every example of a split.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Output file of prediction records.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beam_size: Option<usize>,
    },
    /// Scores top-1 predictions with the component-wise exact match.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        input: PredictionInput,
        /// Output directory for report.txt and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join statistics of top-1 predictions with and without beam filtering.
    AnalyzeJoins {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient at tiny sizes.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupts a backward rule; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Where top-k candidates come from; exactly one must be given.
#[derive(Args, Debug, Clone)]
pub struct PredictionInput {
    /// Checkpoint to decode with.
    #[arg(long, conflicts_with_all = ["predictions", "gold"])]
    pub model: Option<PathBuf>,
    /// Prediction records written by `predict`.
    #[arg(long, conflicts_with = "gold")]
    pub predictions: Option<PathBuf>,
    /// Uses each gold query as its own single candidate.
    #[arg(long)]
    pub gold: bool,
    #[arg(long)]
    pub beam_size: Option<usize>,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            common,
            out,
            n_schemas,
            per_schema,
            train_schemas,
            dev_schemas,
            test_schemas,
            templates,
        } => {
            let cfg = run_config(&common)?;
            let split = match (train_schemas, dev_schemas, test_schemas) {
                (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                (None, None, None) => None,
                _ => return Err(CliError::Config("give all of --train-schemas, --dev-schemas and --test-schemas or none".into())),
            };
            gen_data(&out, cfg.seed, n_schemas, split, per_schema, &templates)
        }
        Command::Train { common, data, out, epochs } => {
            let mut cfg = run_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            train(&cfg, &data, &out)
        }
        Command::Predict {
            common,
            model,
            source,
            out,
            beam_size,
        } => {
            let cfg = run_config(&common)?;
            let (mut m, _) = load_model(&model, &cfg)?;
            let (examples, schemas) = load_source(&source)?;
            let beam = beam_size.unwrap_or(m.config.beam_size);
            let preds = pipeline::predict(&mut m, &examples, &schemas, beam)?;
            ensure_parent(&out)?;
            write_jsonl(&out, &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            common,
            source,
            input,
            out,
        } => {
            let cfg = run_config(&common)?;
            let (examples, schemas) = load_source(&source)?;
            let (preds, label, filter) = candidates(&cfg, &input, &examples, &schemas)?;
            let (top, fallbacks) = pipeline::top_queries(&preds, &schemas, filter)?;
            let report = evaluate(&examples, &top, &schemas)?;
            let mut text = report.table(&label);
            if filter {
                let _ = writeln!(text, "filtered beams falling back to top-1: {fallbacks}");
            }
            print!("{text}");
            if let Some(dir) = out {
                write_dir_file(&dir, "report.txt", &text)?;
                let body = serde_json::to_string_pretty(&report_json(&report, &label, filter, fallbacks)).expect("json");
                write_dir_file(&dir, "report.json", &(body + "\n"))?;
            }
            Ok(())
        }
        Command::AnalyzeJoins {
            common,
            source,
            input,
            out,
        } => {
            let cfg = run_config(&common)?;
            let (examples, schemas) = load_source(&source)?;
            let (preds, label, _) = candidates(&cfg, &input, &examples, &schemas)?;
            let (text, value) = analyze_joins(&examples, &schemas, &preds, &label)?;
            print!("{text}");
            if let Some(dir) = out {
                write_dir_file(&dir, "joins.txt", &text)?;
                write_dir_file(&dir, "joins.json", &(serde_json::to_string_pretty(&value).expect("json") + "\n"))?;
            }
            Ok(())
        }
        Command::Gradcheck {
            common,
            out,
            inject_fault,
        } => {
            let cfg = run_config(&common)?;
            let fault = inject_fault.then_some(Fault::TanhBackward);
            let text = gradcheck(cfg.seed, fault)?;
            if let Some(dir) = &out {
                write_dir_file(dir, "gradcheck.txt", &text.0)?;
            }
            print!("{}", text.0);
            if text.1 {
                Ok(())
            } else {
                Err(CliError::Numeric("gradient check failed".into()))
            }
        }
    }
}

/// Defaults, then the configuration file, then overrides, then flags.
pub fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(CliError::Config)?;
    }
    for kv in &common.set {
        cfg.apply_override(kv).map_err(CliError::Config)?;
    }
    for name in &common.ablation {
        cfg.set(name, "true").map_err(CliError::Config)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string()).map_err(CliError::Config)?;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn write_dir_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn gen_data(
    out: &Path,
    seed: u64,
    n_schemas: Option<usize>,
    split: Option<(usize, usize, usize)>,
    per_schema: usize,
    templates: &[String],
) -> Result<()> {
    let mut cfg = match (split, n_schemas) {
        (Some((a, b, c)), _) => SynthConfig {
            train_schemas: a,
            dev_schemas: b,
            test_schemas: c,
            ..SynthConfig::with_total(seed, a + b + c, per_schema)
        },
        (None, Some(n)) => SynthConfig::with_total(seed, n, per_schema),
        (None, None) => return Err(CliError::Config("--n-schemas is required".into())),
    };
    if cfg.train_schemas + cfg.dev_schemas + cfg.test_schemas == 0 {
        return Err(CliError::Config("at least one schema is required (--n-schemas must be positive)".into()));
    }
    if per_schema == 0 {
        return Err(CliError::Config("--per-schema must be positive".into()));
    }
    if !templates.is_empty() {
        cfg.templates = templates
            .iter()
            .map(|t| Template::parse(t).ok_or_else(|| CliError::Config(format!("unknown template `{t}`"))))
            .collect::<Result<_>>()?;
    }
    let data = sqlgnn::data::generate_synthetic(&cfg)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let docs: Vec<_> = data.schemas.iter().map(|s| s.to_doc()).collect();
    write_jsonl(&out.join("schemas.jsonl"), &docs)?;
    write_jsonl(&out.join("train.jsonl"), &data.train)?;
    write_jsonl(&out.join("dev.jsonl"), &data.dev)?;
    write_jsonl(&out.join("test.jsonl"), &data.test)?;
    println!(
        "{} schemas; {} train, {} dev, {} test examples in {}",
        data.schemas.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Example>> {
    Ok(read_jsonl(&dir.join(format!("{split}.jsonl")))?)
}

pub fn load_source(src: &Source) -> Result<(Vec<Example>, Vec<sqlgnn::schema::Schema>)> {
    let schemas = load_schemas(&src.data.join("schemas.jsonl"))?;
    let examples = load_split(&src.data, &src.split)?;
    Ok((examples, schemas))
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let schemas = load_schemas(&data.join("schemas.jsonl"))?;
    let train_set = load_split(data, "train")?;
    let dev_path = data.join("dev.jsonl");
    let dev_set = if dev_path.exists() { load_split(data, "dev")? } else { Vec::new() };
    if train_set.is_empty() {
        return Err(CliError::Data(format!("{}: no training examples", data.join("train.jsonl").display())));
    }
    let mut train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    reset_run_gnn_calls();
    let fitted = pipeline::fit(cfg.model, &train_cfg, &train_set, &dev_set, &schemas, cfg.seed)?;
    let gnn_calls = run_gnn_calls();
    let outcome = fitted.outcome;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let ckpt = out.join("model.ckpt");
    let mut buf = Vec::new();
    outcome.model.save(&mut buf, cfg.seed)?;
    fs::write(&ckpt, buf).map_err(|e| io_err(&ckpt, e))?;
    write_jsonl(&out.join("metrics.jsonl"), &outcome.log)?;
    write_dir_file(out, "config.txt", &cfg.to_text())?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "train_examples": fitted.coverage.total,
        "train_in_grammar": fitted.coverage.used(),
        "skipped": fitted.coverage.skipped.iter().map(|(i, m)| json!({"index": i, "reason": m})).collect::<Vec<_>>(),
        "run_gnn_calls": gnn_calls,
        "aborted": outcome.aborted,
    });
    write_dir_file(out, "summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    for e in &outcome.log {
        match (e.train_loss, e.dev_accuracy) {
            (None, Some(a)) => println!("epoch {}: dev accuracy {:.4}", e.epoch, a),
            (Some(l), Some(a)) => println!("epoch {}: loss {:.6}, dev accuracy {:.4}", e.epoch, l, a),
            (Some(l), None) => println!("epoch {}: loss {:.6}", e.epoch, l),
            (None, None) => {}
        }
    }
    println!("{}", fitted.coverage.line("coverage"));
    println!("best epoch {}; checkpoint {}", outcome.best_epoch, ckpt.display());
    match outcome.aborted {
        Some(msg) => Err(CliError::Numeric(format!("training stopped early: {msg}"))),
        None => Ok(()),
    }
}

/// Loads a checkpoint, rejecting explicitly configured sizes that disagree
/// with it.
pub fn load_model(path: &Path, cfg: &RunConfig) -> Result<(Model, u64)> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let (mut model, seed) = Model::load(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let diffs = cfg.shape_differences(&model.config);
    if !diffs.is_empty() {
        let list: Vec<String> = diffs
            .iter()
            .map(|(k, ours, theirs)| format!("{k} is {ours} in the configuration but {theirs} in checkpoint {}", path.display()))
            .collect();
        return Err(CliError::Config(list.join("; ")));
    }
    for name in Ablations::NAMES {
        if cfg.explicit.contains(name) {
            model.config.ablations.set(name, cfg.model.ablations.get(name).unwrap_or(false))?;
        }
    }
    if cfg.explicit.contains("beam_size") {
        model.config.beam_size = cfg.model.beam_size;
    }
    model.config.validate()?;
    Ok((model, seed))
}

/// Candidates per example from a checkpoint, a prediction file or gold.
/// Also returns a label and whether beam filtering is on.
fn candidates(
    cfg: &RunConfig,
    input: &PredictionInput,
    examples: &[Example],
    schemas: &[sqlgnn::schema::Schema],
) -> Result<(Vec<Prediction>, String, bool)> {
    if let Some(path) = &input.model {
        let (mut m, _) = load_model(path, cfg)?;
        let beam = input.beam_size.unwrap_or(m.config.beam_size);
        let filter = m.config.ablations.filter_beam;
        let preds = pipeline::predict(&mut m, examples, schemas, beam)?;
        return Ok((preds, model_label(&m.config), filter));
    }
    let filter = cfg.model.ablations.filter_beam;
    if let Some(path) = &input.predictions {
        let preds: Vec<Prediction> = read_jsonl(path)?;
        if preds.len() != examples.len() {
            return Err(CliError::Data(format!(
                "{} holds {} predictions for {} examples",
                path.display(),
                preds.len(),
                examples.len()
            )));
        }
        for (i, (p, e)) in preds.iter().zip(examples).enumerate() {
            if p.db_id != e.db_id {
                return Err(CliError::Data(format!("{}: record {} is for `{}`, expected `{}`", path.display(), i + 1, p.db_id, e.db_id)));
            }
        }
        return Ok((preds, "Predictions".into(), filter));
    }
    if input.gold {
        let preds = examples
            .iter()
            .map(|e| Prediction {
                db_id: e.db_id.clone(),
                question: e.question.clone(),
                candidates: vec![Candidate {
                    sql: e.sql.clone(),
                    log_prob: 0.0,
                    joins: Default::default(),
                }],
            })
            .collect();
        return Ok((preds, "Gold".into(), filter));
    }
    Err(CliError::Config("one of --model, --predictions or --gold is required".into()))
}

/// Row label in the style of an ablation table.
pub fn model_label(cfg: &ModelConfig) -> String {
    let a = &cfg.ablations;
    let base = if a.no_gnn {
        "No GNN"
    } else if a.only_self_attend {
        "Only Self Attend"
    } else if a.no_self_attend {
        "No Self Attend"
    } else if a.no_relevance {
        "No Rel."
    } else if a.oracle_relevance {
        "GNN Oracle Rel."
    } else {
        "GNN"
    };
    if a.filter_beam {
        format!("{base} + Filter")
    } else {
        base.to_string()
    }
}

fn report_json(r: &EvalReport, label: &str, filter: bool, fallbacks: usize) -> serde_json::Value {
    json!({
        "model": label,
        "filter_beam": filter,
        "filter_fallbacks": fallbacks,
        "accuracy": r.accuracy(),
        "single_accuracy": r.single_accuracy(),
        "multi_accuracy": r.multi_accuracy(),
        "bad_join_rate": r.bad_join_rate(),
        "report": r,
    })
}

/// Join-problem rates of the top-1 query, unfiltered and filtered, on all
/// examples and on the Multi subset.
pub fn analyze_joins(
    examples: &[Example],
    schemas: &[sqlgnn::schema::Schema],
    preds: &[Prediction],
    label: &str,
) -> Result<(String, serde_json::Value)> {
    let mut text = String::new();
    let mut rows = Vec::new();
    let _ = writeln!(
        text,
        "{:<24} {:>8} {:>8} {:>11} {:>12} {:>8} {:>8}",
        "Setting", "Acc.", "joins", "same-table", "unconnected", "bad", "multi-bad"
    );
    for filter in [false, true] {
        let (top, fallbacks) = pipeline::top_queries(preds, schemas, filter)?;
        let r = evaluate(examples, &top, schemas)?;
        let multi_idx: Vec<usize> = (0..examples.len())
            .filter(|&i| r.verdicts[i].split == Some(sqlgnn::data::Split::Multi))
            .collect();
        let multi_ex: Vec<Example> = multi_idx.iter().map(|&i| examples[i].clone()).collect();
        let multi_top: Vec<Option<String>> = multi_idx.iter().map(|&i| top[i].clone()).collect();
        let m = evaluate(&multi_ex, &multi_top, schemas)?;
        let name = format!("{label}{}", if filter { " + Filter" } else { "" });
        let _ = writeln!(
            text,
            "{:<24} {:>7.1}% {:>8} {:>10.1}% {:>11.1}% {:>7.1}% {:>7.1}%",
            name,
            100.0 * r.accuracy(),
            r.joins.with_join,
            100.0 * r.joins.same_table_rate(),
            100.0 * r.joins.unconnected_rate(),
            100.0 * r.bad_join_rate(),
            100.0 * m.bad_join_rate()
        );
        rows.push(json!({
            "setting": name,
            "filter_beam": filter,
            "filter_fallbacks": fallbacks,
            "accuracy": r.accuracy(),
            "with_join": r.joins.with_join,
            "same_table_rate": r.joins.same_table_rate(),
            "unconnected_rate": r.joins.unconnected_rate(),
            "bad_join_rate": r.bad_join_rate(),
            "multi_bad_join_rate": m.bad_join_rate(),
        }));
    }
    Ok((text, json!({ "rows": rows })))
}

/// Tiny two-table setting used by the gradient check.
pub fn gradcheck_instance_schema() -> sqlgnn::schema::Schema {
    use ValueType::*;
    schema(
        "pets",
        &[
            ("owner", &[("owner_id", Number, true), ("name", Text, false)]),
            ("pet", &[("pet_id", Number, true), ("owner_id", Number, false), ("age", Number, false)]),
        ],
        &[("pet.owner_id", "owner.owner_id")],
    )
}

pub const GRADCHECK_QUESTION: &str = "pet age";
pub const GRADCHECK_GOLD: &str =
    "SELECT owner.name FROM owner JOIN pet ON owner.owner_id = pet.owner_id WHERE pet.age > 'value'";

/// Gradient check of the full model loss, then of each ablated variant,
/// at dimension 4. Returns the report text and whether everything passed.
pub fn gradcheck(seed: u64, fault: Option<Fault>) -> Result<(String, bool)> {
    let s = gradcheck_instance_schema();
    let base = ModelConfig {
        d_word: 4,
        d_node: 4,
        d_enc: 3,
        d_dec: 4,
        d_att: 3,
        gnn_steps: 2,
        beam_size: 4,
        max_steps: 200,
        ablations: Ablations::default(),
    };
    let mut text = String::new();
    let mut all_ok = true;
    let variants = [None, Some("no_gnn"), Some("no_self_attend"), Some("only_self_attend"), Some("no_relevance"), Some("oracle_relevance")];
    for variant in variants {
        let mut cfg = base;
        if let Some(v) = variant {
            cfg.ablations.set(v, true)?;
        }
        let vocab = Model::build_vocab([GRADCHECK_QUESTION], &[&s]);
        let mut m = Model::new(cfg, vocab, seed)?;
        let inst = m.prepare(GRADCHECK_QUESTION, &s, Some(GRADCHECK_GOLD))?;
        let mut failure: Option<ModelError> = None;
        let make_tape = || match fault {
            Some(f) => Tape::with_fault(f),
            None => Tape::new(),
        };
        let report = check_params_with(&mut m.store, make_tape, &mut |tape: &mut Tape, store| {
            Net::new(&cfg, store).loss(tape, &inst).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => {
                    failure = Some(other);
                    TensorError::Shape { op: "model", left: Vec::new(), right: Vec::new() }
                }
            })
        });
        if let Some(e) = failure {
            return Err(e.into());
        }
        let report = report.map_err(|e| CliError::Numeric(e.to_string()))?;
        all_ok &= report.passed();
        write_report(&mut text, variant.unwrap_or("full"), &report);
    }
    let _ = writeln!(text, "{}", if all_ok { "gradcheck: PASS" } else { "gradcheck: FAIL" });
    Ok((text, all_ok))
}

fn write_report(text: &mut String, name: &str, r: &GradReport) {
    let _ = writeln!(
        text,
        "[{name}] {} coordinates, worst relative error {:.3e}: {}",
        r.coords(),
        r.worst_rel(),
        if r.passed() { "ok" } else { "FAILED" }
    );
    for p in &r.params {
        if p.failures > 0 {
            let _ = writeln!(
                text,
                "  {}: {} of {} coordinates off, worst relative {:.3e}, worst absolute {:.3e}",
                p.name, p.failures, p.coords, p.worst_rel, p.worst_abs
            );
        }
    }
}
