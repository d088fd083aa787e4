//! The `ctc-asr` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 training
//! divergence, 3 I/O or input-data error.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{generate_synthetic_corpus, load_manifest, CorpusError, SynthSpec};
use crate::ctc::greedy_decode;
use crate::features::{extract, FeatureError};
use crate::net::{forward, load_checkpoint, FeatureBatch, Mode, ModelConfig, NetError};
use crate::textmap::Vocabulary;
use crate::train::{
    evaluate, prepare, train_model, EpochRecord, OutputSpec, PreparedItem, TrainError,
};
pub use config::{toy_features, toy_model, PartialModel, RunConfig, TestSet};
use plot::{line_chart, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec(_)
            | CorpusError::BadFractions(_)
            | CorpusError::NyquistViolation { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::BadCheckpoint { .. } | NetError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::Features { .. } | TrainError::Io(_) => CliError::Io(e.to_string()),
            TrainError::Net(n) => n.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ctc-asr",
    version,
    about = "CTC speech recognition: synthesize, train, evaluate, decode"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tone corpus with a manifest and vocabulary file.
    Synth(SynthArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Score a checkpoint on one or more named test sets.
    Eval(EvalArgs),
    /// Train one model per filter count and compare their histories.
    Sweep(SweepArgs),
    /// Transcribe WAV files with a checkpoint.
    Decode(DecodeArgs),
    /// Redraw charts and the summary table from a history CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-corpus spec; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Number of utterances.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    #[arg(long)]
    pub min_chars: Option<usize>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Seconds per character.
    #[arg(long)]
    pub char_duration: Option<f64>,
    #[arg(long)]
    pub base_freq: Option<f64>,
    #[arg(long)]
    pub freq_step: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
}

impl RunOverrides {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e as usize;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Gender,
    Corpus,
    Speaker,
    None,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test set as NAME=MANIFEST; repeatable.
    #[arg(long = "test", value_name = "NAME=MANIFEST")]
    pub tests: Vec<String>,
    /// Run config whose `test_sets` are used when no --test is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "gender")]
    pub group_by: GroupBy,
    /// Target/prediction pairs printed per test set.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Comma-separated convolution filter counts.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub filters: Vec<usize>,
    /// Train the configurations concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub wavs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A run's history.csv or a sweep's sweep_history.csv.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("{}:{}:{}: {e}", p.display(), e.line(), e.column()))
            })?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:expr),* $(,)?) => {
            $(if let Some(v) = $flag.clone() { spec.$field = v.into(); })*
        };
    }
    set!(
        alphabet <- a.alphabet,
        min_chars <- a.min_chars,
        max_chars <- a.max_chars,
        sample_rate <- a.sample_rate,
        char_duration <- a.char_duration,
        base_freq <- a.base_freq,
        freq_step <- a.freq_step,
        noise_amplitude <- a.noise,
        num_speakers <- a.speakers,
        corpus_tag <- a.tag,
        seed <- a.seed,
    );
    if let Some(n) = a.n {
        spec.num_utterances = n as usize;
    }
    spec.validate()?;
    let m = generate_synthetic_corpus(&spec, &a.out)?;
    let vocab = Vocabulary::new(&spec.alphabet).map_err(|e| CliError::Config(e.to_string()))?;
    let vocab_path = a.out.join("vocab.txt");
    vocab
        .save(&vocab_path)
        .map_err(|e| CliError::io(&vocab_path, e))?;
    println!("{}", a.out.join("manifest.csv").display());
    log::info!(
        "{} utterances, vocabulary in {}",
        m.len(),
        vocab_path.display()
    );
    Ok(())
}

struct PreparedRun {
    cfg: RunConfig,
    model: ModelConfig,
    vocab: Vocabulary,
    train: Vec<PreparedItem>,
    val: Vec<PreparedItem>,
}

fn prepare_run(cfg: RunConfig) -> Result<PreparedRun, CliError> {
    cfg.check_inputs()?;
    let vocab = cfg.load_vocabulary()?;
    let model = cfg.validate(&vocab)?;
    let train = prepare(&load_manifest(&cfg.train_manifest)?, &cfg.features, &vocab)?;
    let val = prepare(&load_manifest(&cfg.val_manifest)?, &cfg.features, &vocab)?;
    Ok(PreparedRun {
        cfg,
        model,
        vocab,
        train,
        val,
    })
}

/// Trains into `out_dir`, writing the resolved config snapshot first. A
/// diverged run still returns its partial history alongside the error.
fn train_into(
    run: &PreparedRun,
    model: &ModelConfig,
    out_dir: &Path,
) -> Result<Vec<EpochRecord>, (Vec<EpochRecord>, CliError)> {
    let fail = |e: CliError| (Vec::new(), e);
    create_dir(out_dir).map_err(fail)?;
    let mut snapshot = run.cfg.clone();
    snapshot.out_dir = out_dir.to_path_buf();
    snapshot.model = PartialModel {
        vocab_size_with_blank: Some(model.vocab_size_with_blank),
        feature_bins: Some(model.feature_bins),
        ..PartialModel::from(model)
    };
    write_file(&out_dir.join("run_config.json"), snapshot.to_json()).map_err(fail)?;
    let output = OutputSpec {
        dir: out_dir.to_path_buf(),
        features: run.cfg.features.clone(),
    };
    let result = train_model(
        &run.cfg.train,
        model,
        &run.train,
        &run.val,
        &run.vocab,
        Some(&output),
        |r, e| {
            for (t, p) in &e.samples {
                log::info!("epoch {} Target: {t} | Prediction: {p}", r.epoch);
            }
        },
    );
    match result {
        Ok(o) => Ok(o.history),
        Err(TrainError::DivergedLoss { epoch, history }) => Err((
            history,
            TrainError::DivergedLoss {
                epoch,
                history: Vec::new(),
            }
            .into(),
        )),
        Err(e) => Err(fail(e.into())),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let run = prepare_run(a.run.load()?)?;
    let out = run.cfg.out_dir.clone();
    let history = train_into(&run, &run.model, &out).map_err(|(_, e)| e)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train_loss {:.4} val_loss {:.4} val_wer {:.2}%",
            last.epoch, last.train_loss, last.val_loss, last.val_wer
        );
    }
    println!("{}", out.join("history.csv").display());
    Ok(())
}

fn parse_test_set(s: &str) -> Result<TestSet, CliError> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--test expects NAME=MANIFEST, got {s:?}")))?;
    let safe = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !safe {
        return Err(CliError::Usage(format!(
            "test set name {name:?} must be non-empty and use only letters, digits, '-', '_' or '.'"
        )));
    }
    Ok(TestSet {
        name: name.to_string(),
        manifest: PathBuf::from(path),
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut sets = a
        .tests
        .iter()
        .map(|s| parse_test_set(s))
        .collect::<Result<Vec<_>, _>>()?;
    if sets.is_empty() {
        if let Some(p) = &a.config {
            sets = RunConfig::load(p)?.test_sets;
        }
    }
    if sets.is_empty() {
        return Err(CliError::Usage(
            "no test sets: pass --test NAME=MANIFEST or a config with test_sets".into(),
        ));
    }
    for (i, s) in sets.iter().enumerate() {
        if sets[..i].iter().any(|t| t.name == s.name) {
            return Err(CliError::Usage(format!(
                "test set name {:?} given twice",
                s.name
            )));
        }
        if !s.manifest.is_file() {
            return Err(CliError::Io(format!(
                "{}: file not found",
                s.manifest.display()
            )));
        }
    }
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let vocab = Vocabulary::new(&ck.vocabulary).map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(&a.out)?;
    let group_by = a.group_by;
    let key = move |it: &PreparedItem| match group_by {
        GroupBy::Gender => it.gender.as_str().to_string(),
        GroupBy::Corpus => it.corpus_tag.clone(),
        GroupBy::Speaker => it.speaker_id.clone(),
        GroupBy::None => String::new(),
    };
    for set in &sets {
        let items = prepare(&load_manifest(&set.manifest)?, &ck.features, &vocab)?;
        let grouping: Option<&dyn Fn(&PreparedItem) -> String> = match group_by {
            GroupBy::None => None,
            _ => Some(&key),
        };
        let e = evaluate(
            &ck.params,
            &ck.model,
            &items,
            &vocab,
            a.batch_size as usize,
            a.samples,
            grouping,
        )?;
        let utt = a.out.join(format!("{}_utterances.csv", set.name));
        e.report
            .write_utterance_csv(create_file(&utt)?)
            .map_err(|err| CliError::Io(format!("{}: {err}", utt.display())))?;
        let summary = a.out.join(format!("{}_summary.csv", set.name));
        e.report
            .write_summary_csv(create_file(&summary)?)
            .map_err(|err| CliError::Io(format!("{}: {err}", summary.display())))?;
        let agg = e.report.aggregate;
        println!(
            "[{}] WER {:.2}% (S={} D={} I={} N={}), loss {:.4}",
            set.name, e.report.error_rate, agg.s, agg.d, agg.i, agg.n, e.mean_loss
        );
        for (g, r) in &e.report.groups {
            println!("  {g}: WER {:.2}% (N={})", r.error_rate, r.aggregate.n);
        }
        for (t, p) in &e.samples {
            println!("Target: {t}");
            println!("Prediction: {p}");
        }
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "filters,epoch,train_loss,val_loss,val_wer";

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub filters: usize,
    pub history: Vec<EpochRecord>,
    pub error: Option<String>,
}

impl SweepRun {
    /// Legend text; a plain run history has no filter count (stored as 0).
    pub fn label(&self) -> String {
        if self.filters == 0 {
            "run".to_string()
        } else {
            format!("{} filters", self.filters)
        }
    }

    /// Lowest validation WER and the epoch where it first occurred.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.history.iter().filter(|r| r.val_wer.is_finite()).fold(
            None,
            |best: Option<(f64, usize)>, r| match best {
                Some((w, _)) if w <= r.val_wer => best,
                _ => Some((r.val_wer, r.epoch)),
            },
        )
    }
}

/// Writes the combined CSV, both charts and the summary table.
pub fn write_sweep_artifacts(runs: &[SweepRun], out: &Path) -> Result<(), CliError> {
    let mut combined = String::from(SWEEP_HEADER);
    combined.push('\n');
    for run in runs {
        for r in &run.history {
            combined.push_str(&format!(
                "{},{},{},{},{}\n",
                run.filters, r.epoch, r.train_loss, r.val_loss, r.val_wer
            ));
        }
    }
    write_file(&out.join("sweep_history.csv"), combined)?;

    let points = |run: &SweepRun, f: fn(&EpochRecord) -> f64| -> Vec<(f64, f64)> {
        run.history.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let mut loss = Vec::new();
    let mut wer = Vec::new();
    for run in runs {
        loss.push(Series {
            label: format!("train, {}", run.label()),
            points: points(run, |r| r.train_loss),
        });
        loss.push(Series {
            label: format!("val, {}", run.label()),
            points: points(run, |r| r.val_loss),
        });
        wer.push(Series {
            label: run.label(),
            points: points(run, |r| r.val_wer),
        });
    }
    write_file(
        &out.join("loss.svg"),
        line_chart("Training and validation loss", "epoch", "CTC loss", &loss),
    )?;
    write_file(
        &out.join("wer.svg"),
        line_chart("Validation word error rate", "epoch", "WER (%)", &wer),
    )?;

    let mut summary = String::from("filters,best_val_wer,best_epoch,status\n");
    for run in runs {
        let (w, e) = run.best().map_or((String::new(), String::new()), |(w, e)| {
            (format!("{w:.4}"), e.to_string())
        });
        let status = run.error.as_deref().map_or("ok".to_string(), |m| {
            format!("\"failed: {}\"", m.replace('"', "\"\""))
        });
        summary.push_str(&format!("{},{w},{e},{status}\n", run.filters));
    }
    write_file(&out.join("sweep_summary.csv"), summary)
}

fn print_summary(runs: &[SweepRun]) {
    println!("{:>8}  {:>13}  {:>10}", "filters", "best val WER", "epoch");
    for run in runs {
        match (run.best(), &run.error) {
            (_, Some(err)) => println!("{:>8}  failed: {err}", run.filters),
            (Some((w, e)), None) => println!("{:>8}  {:>12.2}%  {:>10}", run.filters, w, e),
            (None, None) => println!("{:>8}  {:>13}  {:>10}", run.filters, "-", "-"),
        }
    }
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    if a.filters.contains(&0) {
        return Err(CliError::Usage("filter counts must be positive".into()));
    }
    let run = prepare_run(a.run.load()?)?;
    let out = run.cfg.out_dir.clone();
    create_dir(&out)?;
    let one = |&filters: &usize| -> (SweepRun, Option<CliError>) {
        let model = ModelConfig {
            conv_filters: filters,
            ..run.model.clone()
        };
        log::info!("sweep: training with {filters} filters");
        match train_into(&run, &model, &out.join(format!("filters_{filters}"))) {
            Ok(history) => (
                SweepRun {
                    filters,
                    history,
                    error: None,
                },
                None,
            ),
            Err((history, e)) => {
                log::error!("sweep: {filters} filters failed: {e}");
                let error = Some(e.to_string());
                (
                    SweepRun {
                        filters,
                        history,
                        error,
                    },
                    Some(e),
                )
            }
        }
    };
    let results: Vec<(SweepRun, Option<CliError>)> = if a.parallel {
        a.filters.par_iter().map(one).collect()
    } else {
        a.filters.iter().map(one).collect()
    };
    let mut first_error = None;
    let mut runs = Vec::with_capacity(results.len());
    for (r, e) in results {
        if first_error.is_none() {
            first_error = e;
        }
        runs.push(r);
    }
    write_sweep_artifacts(&runs, &out)?;
    print_summary(&runs);
    first_error.map_or(Ok(()), Err)
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let vocab = Vocabulary::new(&ck.vocabulary).map_err(|e| CliError::Config(e.to_string()))?;
    for wav in &a.wavs {
        let feats = extract(wav, &ck.features).map_err(|e| match e {
            FeatureError::Io(io) => CliError::io(wav, io),
            other => CliError::Io(format!("{}: {other}", wav.display())),
        })?;
        let batch = FeatureBatch::from_items(&[(&feats.data, feats.num_frames)], feats.num_bins);
        let (logits, _) = forward(&ck.params, &ck.model, &batch, Mode::Eval)?;
        let text = greedy_decode(&logits, &vocab).remove(0);
        if a.wavs.len() == 1 {
            println!("{text}");
        } else {
            println!("{}\t{text}", wav.display());
        }
    }
    Ok(())
}

fn parse_field(
    rec: &csv::StringRecord,
    idx: usize,
    path: &Path,
    line: u64,
) -> Result<f64, CliError> {
    rec.get(idx)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| {
            CliError::Io(format!(
                "{}: line {line}: bad number in column {}",
                path.display(),
                idx + 1
            ))
        })
}

/// Reads a run history or a combined sweep history into per-run series.
pub fn read_histories(path: &Path) -> Result<Vec<SweepRun>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ep), Some(tl), Some(vl), Some(vw)) = (
        col("epoch"),
        col("train_loss"),
        col("val_loss"),
        col("val_wer"),
    ) else {
        return Err(CliError::Io(format!(
            "{}: expected columns epoch,train_loss,val_loss,val_wer",
            path.display()
        )));
    };
    let fcol = col("filters");
    let mut runs: Vec<SweepRun> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let filters = match fcol {
            Some(c) => parse_field(&rec, c, path, line)? as usize,
            None => 0,
        };
        let record = EpochRecord {
            epoch: parse_field(&rec, ep, path, line)? as usize,
            train_loss: parse_field(&rec, tl, path, line)?,
            val_loss: parse_field(&rec, vl, path, line)?,
            val_wer: parse_field(&rec, vw, path, line)?,
            seconds: 0.0,
        };
        match runs.iter_mut().find(|r| r.filters == filters) {
            Some(r) => r.history.push(record),
            None => runs.push(SweepRun {
                filters,
                history: vec![record],
                error: None,
            }),
        }
    }
    Ok(runs)
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let runs = read_histories(&a.input)?;
    create_dir(&a.out)?;
    write_sweep_artifacts(&runs, &a.out)?;
    print_summary(&runs);
    Ok(())
}
