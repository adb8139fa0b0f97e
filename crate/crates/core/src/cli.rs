//! Command-line surface: generate, train, decode, eval, context, stats.
//!
//! Settings come from an optional TOML file; command-line flags override it.
//! Failures print one JSON record `{"error": kind, "message": …}` to stderr.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_context, generate_synthetic, read_contexts, read_examples, read_passages, score_passages,
    train_question_encoder, write_contexts, write_examples, write_passages, EmbeddingTable,
    Passage, SyntheticConfig, DEFAULT_RETRIEVAL_DROPOUT,
};
use crate::decoding::{top_k, FilterPipeline, PredictionRecord, DEFAULT_SF_TOP_K, DEFAULT_ZETA};
use crate::error::{Error, Result};
use crate::evaluation::{
    avg_topk_span_length, evaluate, histogram_csv, length_histogram, MetricReport,
    DEFAULT_LENGTH_TOP_K,
};
use crate::io::{read_jsonl, write_jsonl};
use crate::model::{
    dss_instances, predict_distribution, train, train_dss, Checkpoint, ObjectiveKind, TrainConfig,
    TrainLog, Vocab,
};
use crate::optim::AdamWConfig;
use crate::stats::{parse_comparison, significance_report, RunSample};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub filter: FilterPipeline,
    pub zeta: usize,
    pub sf_k: usize,
    /// Predictions written per example.
    pub top_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            filter: FilterPipeline::LfSf,
            zeta: DEFAULT_ZETA,
            sf_k: DEFAULT_SF_TOP_K,
            top_k: DEFAULT_LENGTH_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextConfig {
    pub encoder_epochs: usize,
    pub encoder_lr: f64,
    pub dropout: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            encoder_epochs: 5,
            encoder_lr: 1e-2,
            dropout: DEFAULT_RETRIEVAL_DROPOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Em,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub length_top_k: usize,
    pub bin_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            length_top_k: DEFAULT_LENGTH_TOP_K,
            bin_width: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Entries of the form `"A>B"`.
    pub comparisons: Vec<String>,
    pub metric: Metric,
}

/// Everything a command may read from the configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed for generate and context.
    pub seed: u64,
    /// Training seeds; empty means `[train.seed]`.
    pub seeds: Vec<u64>,
    pub generate: SyntheticConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub context: ContextConfig,
    pub eval: EvalConfig,
    pub stats: StatsConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spanqa",
    version,
    about = "Span-extraction objectives for extractive QA"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus: train/dev splits, passages and embeddings.
    Generate(GenerateArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Write ranked span predictions for a dataset.
    Decode(DecodeArgs),
    /// Score predictions against gold answers.
    Eval(EvalArgs),
    /// Retrieve passage contexts for shared-normalization training.
    Context(ContextArgs),
    /// Paired significance tests over per-seed metric files.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and dev.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d_emb: Option<usize>,
    /// Context file for I+J-DSS.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    /// Continue from a checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub filter: Option<FilterPipeline>,
    #[arg(long)]
    pub zeta: Option<usize>,
    #[arg(long)]
    pub sf_k: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset file (JSONL) with gold answers.
    #[arg(long)]
    pub data: PathBuf,
    /// Metric report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Length histogram (CSV).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ContextArgs {
    /// Directory holding train.jsonl, passages.jsonl and embeddings.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Metric reports carrying a label and a seed.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    /// Text report.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Comparisons such as `I+J>I`.
    #[arg(long = "compare")]
    pub compare: Vec<String>,
    #[arg(long, value_enum)]
    pub metric: Option<Metric>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs, cfg: &ExperimentConfig) -> Result<()> {
    let mut gen = cfg.generate.clone();
    if let Some(n) = args.n_train {
        gen.n_train = n;
    }
    if let Some(n) = args.n_dev {
        gen.n_dev = n;
    }
    gen.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let corpus = generate_synthetic(&gen, seed)?;
    fs::create_dir_all(&args.out)?;
    write_examples(&args.out.join(TRAIN_FILE), &corpus.train)?;
    write_examples(&args.out.join(DEV_FILE), &corpus.dev)?;
    write_passages(&args.out.join(PASSAGES_FILE), &corpus.passages)?;
    corpus.embeddings.write(&args.out.join(EMBEDDINGS_FILE))
}

/// Paths of the checkpoint and log for one training run.
pub fn run_paths(out: &Path, objective: ObjectiveKind, seed: u64) -> (PathBuf, PathBuf) {
    let stem = format!("{}-seed{seed}", objective.as_str());
    (
        out.join(format!("{stem}.ckpt")),
        out.join(format!("{stem}.log.json")),
    )
}

#[derive(Debug, Serialize)]
struct RunLog<'a> {
    label: &'a str,
    seed: u64,
    log: &'a TrainLog,
}

pub fn cmd_train(args: &TrainArgs, cfg: &ExperimentConfig) -> Result<()> {
    let mut base = cfg.train.clone();
    if let Some(o) = args.objective {
        base.objective = o;
    }
    if let Some(e) = args.epochs {
        base.epochs = e;
    }
    if let Some(lr) = args.lr {
        base.lr = lr;
    }
    if let Some(b) = args.batch_size {
        base.batch_size = b;
    }
    if let Some(d) = args.d_emb {
        base.d_emb = d;
    }

    let train_set = read_examples(&args.data.join(TRAIN_FILE))?;
    let dev_set = read_examples(&args.data.join(DEV_FILE))?;

    let resume = args.resume.as_deref().map(Checkpoint::read).transpose()?;
    let seeds: Vec<u64> = match (&args.seeds, &resume) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => vec![c.header.seed],
        (None, None) if !cfg.seeds.is_empty() => cfg.seeds.clone(),
        (None, None) => vec![base.seed],
    };
    if seeds.is_empty() {
        return Err(Error::Config("no training seeds".into()));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::Config("duplicate training seeds".into()));
    }
    if let Some(c) = &resume {
        if seeds != [c.header.seed] {
            return Err(Error::Config(
                "resume continues exactly the checkpoint's seed".into(),
            ));
        }
        let epochs = base.epochs;
        base = c.header.config.clone();
        base.epochs = args.epochs.unwrap_or(epochs.max(c.header.epochs_done));
    }
    base.validate()?;

    let dss = base.objective == ObjectiveKind::CompoundDss;
    let contexts = match (&args.contexts, dss) {
        (Some(p), true) => Some(read_contexts(p)?),
        (None, true) => {
            return Err(Error::Config(
                "objective I+J-DSS requires --contexts".into(),
            ))
        }
        (Some(_), false) => return Err(Error::Config("--contexts is only used by I+J-DSS".into())),
        (None, false) => None,
    };
    let passages = match contexts {
        Some(_) => read_passages(&args.data.join(PASSAGES_FILE))?,
        None => Vec::new(),
    };
    let vocab = match &resume {
        Some(c) => c.vocab.clone(),
        None => Vocab::build(train_set.iter().flat_map(|e| [&e.question, &e.passage])),
    };
    let instances = match &contexts {
        Some(c) => Some(dss_instances(&train_set, c, &passages, &vocab)?),
        None => None,
    };

    let results: Vec<(u64, Result<(Checkpoint, TrainLog)>)> = seeds
        .par_iter()
        .map(|&seed| {
            let config = TrainConfig {
                seed,
                ..base.clone()
            };
            let state = resume.as_ref().map(|c| c.state.clone());
            let outcome = match &instances {
                Some(inst) => train_dss(inst, &dev_set, &vocab, &config, state),
                None => train(&train_set, &dev_set, &vocab, &config, state),
            }
            .map(|(state, log)| (Checkpoint::new(vocab.clone(), state, &config), log));
            (seed, outcome)
        })
        .collect();

    fs::create_dir_all(&args.out)?;
    let mut failures = Vec::new();
    for (seed, outcome) in results {
        match outcome {
            Ok((ckpt, log)) => {
                let (ckpt_path, log_path) = run_paths(&args.out, base.objective, seed);
                ckpt.write(&ckpt_path)?;
                let record = RunLog {
                    label: base.objective.as_str(),
                    seed,
                    log: &log,
                };
                write_json(&log_path, &record)?;
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Divergence(failures.join("; ")))
    }
}

pub fn cmd_decode(args: &DecodeArgs, cfg: &ExperimentConfig) -> Result<()> {
    let mut dc = cfg.decode.clone();
    if let Some(f) = args.filter {
        dc.filter = f;
    }
    if let Some(z) = args.zeta {
        dc.zeta = z;
    }
    if let Some(k) = args.sf_k {
        dc.sf_k = k;
    }
    if let Some(k) = args.top_k {
        dc.top_k = k;
    }
    if dc.top_k == 0 || dc.sf_k == 0 {
        return Err(Error::Config("top_k and sf_k must be positive".into()));
    }
    let ckpt = Checkpoint::read(&args.checkpoint)?;
    let examples = read_examples(&args.data)?;
    let tc = &ckpt.header.config;
    let records = examples
        .par_iter()
        .map(|ex| {
            let dist = predict_distribution(
                &ckpt.state.params,
                &ckpt.vocab.encode(&ex.question),
                &ckpt.vocab.encode(&ex.passage),
                tc.objective,
                tc.mask,
                tc.beam,
            )?;
            let filtered = dc.filter.apply(&dist, &ex.passage, dc.zeta, dc.sf_k);
            Ok(PredictionRecord::from_predictions(
                &ex.id,
                &top_k(&filtered, &ex.passage, dc.top_k),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<PredictionRecord> = records.into_iter().flatten().collect();
    ensure_parent(&args.out)?;
    write_jsonl(&args.out, &flat)
}

/// Predictions grouped per example in rank order.
fn group_predictions(records: Vec<PredictionRecord>) -> BTreeMap<String, Vec<PredictionRecord>> {
    let mut grouped: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.example_id.clone()).or_default().push(r);
    }
    for v in grouped.values_mut() {
        v.sort_by_key(|r| r.rank);
    }
    grouped
}

pub fn cmd_eval(args: &EvalArgs, cfg: &ExperimentConfig) -> Result<()> {
    let ec = &cfg.eval;
    if ec.length_top_k == 0 || !(ec.bin_width > 0.0) {
        return Err(Error::Config(
            "length_top_k and bin_width must be positive".into(),
        ));
    }
    let records: Vec<PredictionRecord> = read_jsonl(&args.predictions)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("predictions file is empty".into()));
    }
    let examples = read_examples(&args.data)?;
    let grouped = group_predictions(records);
    let gold_ids: BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = grouped.keys().map(String::as_str).collect();
    if gold_ids != pred_ids {
        let missing = gold_ids.difference(&pred_ids).next();
        let extra = pred_ids.difference(&gold_ids).next();
        return Err(Error::InvalidInput(format!(
            "prediction ids do not match the dataset (first missing {missing:?}, first unknown {extra:?})"
        )));
    }
    let mut report = evaluate(examples.iter().map(|ex| {
        let top = grouped[ex.id.as_str()][0].text.as_str();
        (ex.id.as_str(), top, ex.answers.as_slice())
    }))?;
    report.label = args.label.clone();
    report.seed = args.seed;

    let lengths = examples
        .iter()
        .map(|ex| {
            let texts: Vec<String> = grouped[ex.id.as_str()]
                .iter()
                .map(|r| r.text.clone())
                .collect();
            avg_topk_span_length(&ex.id, &texts, ec.length_top_k)
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(&args.out)?;
    write_json(&args.out, &report)?;
    if let Some(h) = &args.histogram {
        ensure_parent(h)?;
        fs::write(h, histogram_csv(&length_histogram(&lengths, ec.bin_width)))?;
    }
    Ok(())
}

pub fn cmd_context(args: &ContextArgs, cfg: &ExperimentConfig) -> Result<()> {
    let cc = &cfg.context;
    let k = args.k.unwrap_or(cfg.train.context_size);
    if k == 0 {
        return Err(Error::Config("context size must be positive".into()));
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let examples = read_examples(&args.data.join(TRAIN_FILE))?;
    let passages = read_passages(&args.data.join(PASSAGES_FILE))?;
    let table = EmbeddingTable::read(&args.data.join(EMBEDDINGS_FILE))?;

    let texts: HashMap<&str, &str> = passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let table_passages = table
        .ids
        .iter()
        .map(|id| {
            texts
                .get(id.as_str())
                .map(|t| Passage::new(*t))
                .ok_or_else(|| Error::Format(format!("embedding row {id} has no passage text")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = examples
        .iter()
        .map(|ex| {
            table
                .row_of(&ex.id)
                .map(|row| (ex.question.clone(), row))
                .ok_or_else(|| Error::InvalidInput(format!("no embedding for passage {}", ex.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let optim = AdamWConfig {
        lr: cc.encoder_lr,
        ..AdamWConfig::default()
    };
    optim.validate()?;
    let encoder =
        train_question_encoder(&pairs, &table, cc.encoder_epochs, optim, cc.dropout, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = examples
        .iter()
        .map(|ex| {
            let ranking = score_passages(&encoder.encode(&ex.question), &table)?;
            build_context(
                &ex.id,
                &ranking,
                &table.ids,
                &table_passages,
                &ex.answers[0],
                k,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(&args.out)?;
    write_contexts(&args.out, &contexts)
}

pub fn cmd_stats(args: &StatsArgs, cfg: &ExperimentConfig) -> Result<()> {
    let metric = args.metric.unwrap_or(cfg.stats.metric);
    let specs = if args.compare.is_empty() {
        &cfg.stats.comparisons
    } else {
        &args.compare
    };
    let comparisons = specs
        .iter()
        .map(|s| parse_comparison(s))
        .collect::<Result<Vec<_>>>()?;

    let mut by_label: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for path in &args.metrics {
        let report: MetricReport = read_json(path)?;
        let (Some(label), Some(seed)) = (report.label.clone(), report.seed) else {
            return Err(Error::Format(format!(
                "{} lacks a label or seed",
                path.display()
            )));
        };
        let value = match metric {
            Metric::Em => report.em,
            Metric::F1 => report.f1,
        };
        if by_label
            .entry(label.clone())
            .or_default()
            .insert(seed, value)
            .is_some()
        {
            return Err(Error::Format(format!(
                "duplicate metrics for {label} seed {seed}"
            )));
        }
    }
    for (a, b) in &comparisons {
        let seeds_of = |l: &str| {
            by_label
                .get(l)
                .map(|m| m.keys().copied().collect::<Vec<_>>())
                .ok_or_else(|| Error::InvalidInput(format!("no metric files labelled {l:?}")))
        };
        if seeds_of(a)? != seeds_of(b)? {
            return Err(Error::InvalidInput(format!(
                "seed mismatch between {a} and {b}"
            )));
        }
    }
    let samples = by_label
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(label, v)| RunSample::new(label, v.into_values().collect()))
        .collect::<Result<Vec<_>>>()?;
    let report = significance_report(&samples, &comparisons)?;
    ensure_parent(&args.out)?;
    fs::write(&args.out, report.to_text())?;
    if let Some(j) = &args.json {
        ensure_parent(j)?;
        write_json(j, &report)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Decode(a) => cmd_decode(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Context(a) => cmd_context(a, &cfg),
        Command::Stats(a) => cmd_stats(a, &cfg),
    }
}

fn error_record(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses the process arguments, runs the command and maps failures to an
/// exit code plus a JSON error record on stderr.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{}", error_record("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: ExperimentConfig =
            toml::from_str("seed = 3\n[train]\nepochs = 2\nobjective = \"I\"\n").unwrap();
        assert_eq!(ok.seed, 3);
        assert_eq!(ok.train.epochs, 2);
        assert_eq!(ok.train.objective, ObjectiveKind::Independent);
        assert!(toml::from_str::<ExperimentConfig>("sede = 3").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[train]\nepoch = 3").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[decode]\nfilter = \"lf\"\nzeta = 5").is_ok());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "spanqa",
            "train",
            "--data",
            "d",
            "--out",
            "o",
            "--objective",
            "I+J",
            "--seeds",
            "1,2,3",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.seeds, Some(vec![1, 2, 3]));
        assert_eq!(a.objective, Some(ObjectiveKind::Compound));
        assert!(Cli::try_parse_from([
            "spanqa",
            "train",
            "--data",
            "d",
            "--out",
            "o",
            "--objective",
            "K"
        ])
        .is_err());
    }

    #[test]
    fn error_records_are_json() {
        let v: serde_json::Value =
            serde_json::from_str(&error_record("config_error", "bad \"x\"")).unwrap();
        assert_eq!(v["error"], "config_error");
        assert_eq!(v["message"], "bad \"x\"");
    }
}
