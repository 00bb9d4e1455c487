//! `wsguard` command line.
//!
//! Exit codes: 0 clean, 1 error, 2 usage, 3 detections found
//! (`rules scan`, `predict`, `inspect once`).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::evalkit::{
    clean_webshell_candidates, dedup, fold_train_indices, grid_search, list_files, metrics,
    random_search, split_dataset, stratified_folds, write_manifest, ConfusionMatrix, DatasetItem,
    ManifestRow, SearchSpace,
};
use crate::flowmeter::{
    assemble_flows, extract_features, model_inputs, read_csv, read_pcap, write_csv, write_csv_to,
    write_jsonl, FeatureRecord, ModelInputs, DEFAULT_ACTIVITY_TIMEOUT, DEFAULT_FLOW_TIMEOUT,
};
use crate::inspector::{
    emit_eve, inspect_pcap, write_rules, Daemon, InspectorConfig, InspectorState, Mode, Server,
    RULE_FILE,
};
use crate::opcode::{
    read_corpus_csv, vectorize_corpus, write_corpus_csv, Language, OciVector, OpcodeVocabulary,
};
use crate::rulelang::{load_rules_path, scan_tree, RuleSet};
use crate::srcmodel::{
    cnn_predict_batch, hybrid_detect, train_cnn, CnnConfig, ScanRecord, SourceModel,
};
use crate::trafficmodel::{
    dnn_predict, kfold_cv, load_flow_classifier, train_dnn, train_dnn_inputs, TabularConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DETECTED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "wsguard",
    version,
    about = "Webshell detection for source files and network traffic"
)]
struct Cli {
    /// Machine-readable output: one JSON document per line.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice (shuffling, init, splits, schedules).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding the defaults of the command's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Signature rules.
    #[command(subcommand)]
    Rules(RulesCmd),
    /// Opcode sequences.
    #[command(subcommand)]
    Oci(OciCmd),
    /// Model training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Verdicts from trained models.
    #[command(subcommand)]
    Predict(PredictCmd),
    /// Flow features from captures.
    #[command(subcommand)]
    Flows(FlowsCmd),
    /// Detection metrics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Hyperparameter search.
    #[command(subcommand)]
    Tune(TuneCmd),
    /// Sample hygiene and splits.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Traffic inspection.
    #[command(subcommand)]
    Inspect(InspectCmd),
}

#[derive(Subcommand, Debug)]
enum RulesCmd {
    /// Parse rule files and report their rule counts.
    Check {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Match every file under a directory.
    Scan {
        /// Rule file or directory of `.yar` files.
        #[arg(long)]
        rules: PathBuf,
        root: PathBuf,
        /// Only files with these extensions (comma separated).
        #[arg(long, value_delimiter = ',')]
        ext: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum OciCmd {
    /// Turn opcode dumps into a labelled index-vector CSV.
    Extract {
        #[arg(long, value_enum)]
        language: Lang,
        /// Opcode vocabulary file; the shipped one when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = crate::opcode::DEFAULT_MAX_LENGTH)]
        max_length: usize,
        /// Directory of benign dumps (label 0).
        #[arg(long)]
        benign: Vec<PathBuf>,
        /// Directory of webshell dumps (label 1).
        #[arg(long)]
        webshell: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    /// Opcode CNN from an `oci extract` CSV.
    Src {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        language: Lang,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        filters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flow DNN from labelled flow CSVs.
    Flow {
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        #[command(flatten)]
        tab: TabularArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct TabularArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden widths, e.g. `400,100`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Plain cross-entropy instead of class-weighted.
    #[arg(long)]
    unweighted: bool,
}

#[derive(Subcommand, Debug)]
enum PredictCmd {
    /// Hybrid rules + CNN verdict per source file.
    Src {
        #[arg(long)]
        model: PathBuf,
        /// Rule file or directory; without it only the CNN decides.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Opcode dumps live beside each source as `<file><suffix>`.
        #[arg(long)]
        dump_suffix: Option<String>,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Classify flows from a capture or a flow CSV.
    Flow {
        /// Trained checkpoint or JSON stub.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
        pcap: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum FlowsCmd {
    /// Bidirectional flow features from pcap files.
    Extract {
        #[arg(long = "pcap", required = true)]
        pcaps: Vec<PathBuf>,
        /// CSV (or JSONL with `--jsonl`) destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jsonl: bool,
        /// Seconds of silence that end a flow.
        #[arg(long, default_value_t = DEFAULT_FLOW_TIMEOUT as f64 / 1e6)]
        flow_timeout: f64,
        /// Seconds of silence that end an active period.
        #[arg(long, default_value_t = DEFAULT_ACTIVITY_TIMEOUT as f64 / 1e6)]
        activity_timeout: f64,
        /// Label written on every flow.
        #[arg(long)]
        label: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCmd {
    /// Metrics from confusion-matrix counts.
    Metrics {
        #[arg(long)]
        tp: u64,
        #[arg(long)]
        fp: u64,
        #[arg(long = "fn")]
        fn_: u64,
        #[arg(long)]
        tn: u64,
    },
    /// Stratified k-fold cross-validation of the flow DNN.
    Kfold {
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        tab: TabularArgs,
    },
}

#[derive(Subcommand, Debug)]
enum TuneCmd {
    /// Grid (or random, with `--samples`) search scored by k-fold accuracy.
    Grid {
        /// Search space JSON.
        #[arg(long)]
        space: PathBuf,
        /// Labelled flow CSV: tunes the flow DNN.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        flows: Option<PathBuf>,
        /// `oci extract` CSV: tunes the opcode CNN.
        #[arg(long, requires = "language")]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum)]
        language: Option<Lang>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Draw this many random points instead of the full grid.
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Report byte-identical files.
    Dedup {
        root: PathBuf,
        /// Manifest of the unique files.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train/test manifest. Each directory's subdirectories are sources.
    Split {
        #[arg(long)]
        benign: Vec<PathBuf>,
        #[arg(long)]
        webshell: Vec<PathBuf>,
        #[arg(long, default_value_t = crate::evalkit::DEFAULT_TRAIN_RATIO)]
        ratio: f64,
        /// Keep every source on one side of the split.
        #[arg(long)]
        by_source: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confirm webshell candidates against signature rules.
    Clean {
        #[arg(long)]
        rules: PathBuf,
        candidates: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum InspectCmd {
    /// Inspect one capture: EVE alerts on stdout, rules to the rules dir.
    Once {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        rules_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Run the inspection daemon on a Unix socket.
    Serve {
        #[arg(long)]
        socket: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        rules_dir: Option<PathBuf>,
        #[arg(long)]
        spool_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Lang {
    Php,
    Cil,
}

impl From<Lang> for Language {
    fn from(l: Lang) -> Language {
        match l {
            Lang::Php => Language::Php,
            Lang::Cil => Language::Cil,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Ips,
    Ids,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Ips => Mode::Ips,
            ModeArg::Ids => Mode::Ids,
        }
    }
}

struct Ctx<'a> {
    json: bool,
    seed: u64,
    config: Option<PathBuf>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    /// Prints `human` or, with `--json`, `value` on one line.
    fn emit(&mut self, human: impl FnOnce() -> String, value: impl Serialize) -> Result<()> {
        if self.json {
            writeln!(self.out, "{}", serde_json::to_string(&value)?)?;
        } else {
            writeln!(self.out, "{}", human())?;
        }
        Ok(())
    }

    fn note(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.err, "{msg}");
    }

    /// `base` with the keys of the `--config` JSON object laid over it.
    fn overlay<T: Serialize + DeserializeOwned>(&self, base: T) -> Result<T> {
        let Some(path) = &self.config else {
            return Ok(base);
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(patch) = patch else {
            bail!("{} must hold a JSON object", path.display())
        };
        let mut v = serde_json::to_value(base)?;
        let obj = v.as_object_mut().expect("configs serialize to objects");
        for (k, x) in patch {
            if !obj.contains_key(&k) {
                bail!("unknown configuration key {k:?} in {}", path.display());
            }
            obj.insert(k, x);
        }
        serde_json::from_value(v)
            .with_context(|| format!("invalid configuration in {}", path.display()))
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render().ansi());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let mut ctx = Ctx {
        json: cli.json,
        seed: cli.seed,
        config: cli.config,
        out,
        err,
    };
    match dispatch(cli.command, &mut ctx) {
        Ok(code) => code,
        Err(e) => {
            ctx.note(format!("error: {e:#}"));
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command, ctx: &mut Ctx) -> Result<i32> {
    match cmd {
        Command::Rules(RulesCmd::Check { paths }) => rules_check(ctx, &paths),
        Command::Rules(RulesCmd::Scan { rules, root, ext }) => rules_scan(ctx, &rules, &root, &ext),
        Command::Oci(OciCmd::Extract {
            language,
            vocab,
            max_length,
            benign,
            webshell,
            out,
        }) => oci_extract(
            ctx,
            language.into(),
            vocab.as_deref(),
            max_length,
            &benign,
            &webshell,
            &out,
        ),
        Command::Train(TrainCmd::Src {
            corpus,
            language,
            vocab,
            epochs,
            batch_size,
            learning_rate,
            filters,
            out,
        }) => {
            let opts = CnnOverrides {
                epochs,
                batch_size,
                learning_rate,
                filters,
            };
            train_src(ctx, &corpus, language.into(), vocab.as_deref(), opts, &out)
        }
        Command::Train(TrainCmd::Flow { csvs, tab, out }) => train_flow(ctx, &csvs, &tab, &out),
        Command::Predict(PredictCmd::Src {
            model,
            rules,
            vocab,
            dump_suffix,
            paths,
        }) => predict_src(
            ctx,
            &model,
            rules.as_deref(),
            vocab.as_deref(),
            dump_suffix.as_deref(),
            &paths,
        ),
        Command::Predict(PredictCmd::Flow { model, pcap, csv }) => {
            predict_flow(ctx, &model, pcap, csv)
        }
        Command::Flows(FlowsCmd::Extract {
            pcaps,
            out,
            jsonl,
            flow_timeout,
            activity_timeout,
            label,
        }) => flows_extract(
            ctx,
            &pcaps,
            out.as_deref(),
            jsonl,
            (flow_timeout, activity_timeout),
            label,
        ),
        Command::Eval(EvalCmd::Metrics { tp, fp, fn_, tn }) => {
            eval_metrics(ctx, ConfusionMatrix::new(tp, fp, fn_, tn))
        }
        Command::Eval(EvalCmd::Kfold { csvs, k, tab }) => eval_kfold(ctx, &csvs, k, &tab),
        Command::Tune(TuneCmd::Grid {
            space,
            flows,
            corpus,
            language,
            k,
            samples,
        }) => tune(
            ctx,
            &space,
            flows.as_deref(),
            corpus.as_deref(),
            language.map(Into::into),
            k,
            samples,
        ),
        Command::Dataset(DatasetCmd::Dedup { root, manifest }) => {
            dataset_dedup(ctx, &root, manifest.as_deref())
        }
        Command::Dataset(DatasetCmd::Split {
            benign,
            webshell,
            ratio,
            by_source,
            out,
        }) => dataset_split(ctx, &benign, &webshell, ratio, by_source, &out),
        Command::Dataset(DatasetCmd::Clean { rules, candidates }) => {
            dataset_clean(ctx, &rules, &candidates)
        }
        Command::Inspect(InspectCmd::Once {
            pcap,
            model,
            rules_dir,
            mode,
        }) => {
            let config = inspector_config(ctx, model, rules_dir, mode, None, None)?;
            inspect_once(ctx, &pcap, config)
        }
        Command::Inspect(InspectCmd::Serve {
            socket,
            model,
            rules_dir,
            spool_dir,
            mode,
        }) => {
            let config = inspector_config(ctx, model, rules_dir, mode, socket, spool_dir)?;
            inspect_serve(ctx, config)
        }
    }
}

fn rules_check(ctx: &mut Ctx, paths: &[PathBuf]) -> Result<i32> {
    let mut failed = false;
    for p in paths {
        match load_rules_path(p) {
            Ok(set) => {
                let names: Vec<&str> = set.rules().iter().map(|r| r.name.as_str()).collect();
                let fp = set.fingerprint().to_string();
                ctx.emit(
                    || format!("{}: {} rules ({})", p.display(), names.len(), &fp[..12]),
                    json!({"path": p, "rules": names, "fingerprint": fp}),
                )?;
            }
            Err(e) => {
                failed = true;
                ctx.emit(
                    || format!("{}: {e}", p.display()),
                    json!({"path": p, "error": e.to_string()}),
                )?;
            }
        }
    }
    Ok(if failed { EXIT_ERROR } else { EXIT_OK })
}

fn rules_scan(ctx: &mut Ctx, rules: &Path, root: &Path, ext: &[String]) -> Result<i32> {
    let set = load_rules_path(rules)?;
    let outcome = scan_tree(&set, root, ext)?;
    for (path, report) in &outcome.hits {
        let names = report.rule_names();
        ctx.emit(
            || format!("{}: {}", path.display(), names.join(", ")),
            json!({"path": path, "rules": names, "matches": report.matches}),
        )?;
    }
    for (path, e) in &outcome.errors {
        ctx.note(format!("{}: {e}", path.display()));
    }
    ctx.note(format!(
        "scanned {} files, {} matched",
        outcome.scanned,
        outcome.hits.len()
    ));
    Ok(if outcome.hits.is_empty() {
        EXIT_OK
    } else {
        EXIT_DETECTED
    })
}

fn vocabulary(language: Language, path: Option<&Path>) -> Result<OpcodeVocabulary> {
    Ok(match path {
        Some(p) => OpcodeVocabulary::load(p)?,
        None => OpcodeVocabulary::builtin(language),
    })
}

fn labelled_files(benign: &[PathBuf], webshell: &[PathBuf]) -> Result<Vec<(PathBuf, usize)>> {
    let mut items = Vec::new();
    for (dirs, label) in [(benign, 0), (webshell, 1)] {
        for d in dirs {
            items.extend(list_files(d)?.into_iter().map(|p| (p, label)));
        }
    }
    Ok(items)
}

fn oci_extract(
    ctx: &mut Ctx,
    language: Language,
    vocab: Option<&Path>,
    max_length: usize,
    benign: &[PathBuf],
    webshell: &[PathBuf],
    out: &Path,
) -> Result<i32> {
    let vocab = vocabulary(language, vocab)?;
    let items = labelled_files(benign, webshell)?;
    if items.is_empty() {
        bail!("no input files; pass --benign and/or --webshell directories");
    }
    let corpus = vectorize_corpus(&items, language, &vocab, max_length);
    for (p, e) in &corpus.failures {
        ctx.note(format!("{}: {e}", p.display()));
    }
    write_corpus_csv(&corpus, out)?;
    ctx.emit(
        || {
            format!(
                "wrote {} rows to {} ({} failed)",
                corpus.len(),
                out.display(),
                corpus.failures.len()
            )
        },
        json!({"rows": corpus.len(), "failures": corpus.failures.len(), "out": out}),
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Default, Clone, Copy)]
struct CnnOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    filters: Option<usize>,
}

fn train_src(
    ctx: &mut Ctx,
    corpus: &Path,
    language: Language,
    vocab: Option<&Path>,
    o: CnnOverrides,
    out: &Path,
) -> Result<i32> {
    let vocab = vocabulary(language, vocab)?;
    let data = read_corpus_csv(corpus)?;
    let max_length = data.max_length().context("corpus is empty")?;
    let mut cfg = CnnConfig {
        max_length,
        seed: ctx.seed,
        ..CnnConfig::for_language(language, vocab.len())
    };
    cfg = ctx.overlay(cfg)?;
    cfg.epochs = o.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = o.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.num_filters = o.filters.unwrap_or(cfg.num_filters);
    let (model, history) = SourceModel::train(&data.rows, &data.labels, &cfg, language, &vocab)?;
    model.save(out)?;
    for (i, h) in history.iter().enumerate() {
        ctx.emit(
            || {
                format!(
                    "epoch {:>3}  loss {:.4}  accuracy {:.4}",
                    i + 1,
                    h.loss,
                    h.accuracy
                )
            },
            json!({"epoch": i + 1, "loss": h.loss, "accuracy": h.accuracy}),
        )?;
    }
    ctx.note(format!("saved {}", out.display()));
    Ok(EXIT_OK)
}

fn read_flow_csvs(ctx: &mut Ctx, paths: &[PathBuf]) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::new();
    for p in paths {
        let r = read_csv(p).with_context(|| format!("reading {}", p.display()))?;
        if r.cleaned_cells + r.skipped_rows > 0 {
            ctx.note(format!(
                "{}: {} non-finite cells zeroed, {} repeated headers skipped",
                p.display(),
                r.cleaned_cells,
                r.skipped_rows
            ));
        }
        records.extend(r.records);
    }
    Ok(records)
}

fn tabular_config(ctx: &Ctx, tab: &TabularArgs) -> Result<TabularConfig> {
    let mut cfg = ctx.overlay(TabularConfig {
        seed: ctx.seed,
        ..TabularConfig::default()
    })?;
    cfg.epochs = tab.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = tab.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = tab.learning_rate.unwrap_or(cfg.learning_rate);
    if let Some(h) = &tab.hidden {
        cfg.hidden = h.clone();
    }
    if tab.unweighted {
        cfg.weighted = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_flow(ctx: &mut Ctx, csvs: &[PathBuf], tab: &TabularArgs, out: &Path) -> Result<i32> {
    let cfg = tabular_config(ctx, tab)?;
    let records = read_flow_csvs(ctx, csvs)?;
    let (model, history) = train_dnn(&records, &cfg)?;
    model.save(out)?;
    for (i, h) in history.iter().enumerate() {
        ctx.emit(
            || {
                format!(
                    "epoch {:>3}  loss {:.4}  accuracy {:.4}",
                    i + 1,
                    h.loss,
                    h.accuracy
                )
            },
            json!({"epoch": i + 1, "loss": h.loss, "accuracy": h.accuracy}),
        )?;
    }
    ctx.note(format!("saved {} ({} flows)", out.display(), records.len()));
    Ok(EXIT_OK)
}

fn predict_src(
    ctx: &mut Ctx,
    model: &Path,
    rules: Option<&Path>,
    vocab: Option<&Path>,
    suffix: Option<&str>,
    paths: &[PathBuf],
) -> Result<i32> {
    let model = SourceModel::load(model)?;
    let vocab = vocabulary(model.language, vocab)?;
    model.check_vocabulary(&vocab)?;
    let rules = match rules {
        Some(p) => load_rules_path(p)?,
        None => RuleSet::parse("")?,
    };
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(list_files(p)?);
        } else {
            files.push(p.clone());
        }
    }
    let (mut detected, mut failed) = (false, false);
    for f in files {
        let verdict = std::fs::read(&f)
            .map_err(|e| crate::srcmodel::SrcError::Config(format!("cannot read: {e}")))
            .and_then(|source| {
                let dump = match suffix {
                    Some(s) => {
                        let mut d = f.clone().into_os_string();
                        d.push(s);
                        std::fs::read_to_string(PathBuf::from(d)).ok()
                    }
                    None => None,
                };
                hybrid_detect(
                    &rules,
                    &model,
                    &vocab,
                    model.language,
                    &source,
                    dump.as_deref(),
                )
            });
        let rec = ScanRecord::new(&f.display().to_string(), &verdict);
        detected |= rec.is_webshell();
        failed |= rec.error.is_some();
        let human = || match (&rec.error, rec.p_webshell) {
            (Some(e), _) => format!("{}: error: {e}", rec.path),
            (None, Some(p)) => format!(
                "{}: {} (p={p:.4}{})",
                rec.path,
                rec.label,
                rule_suffix(&rec.rules)
            ),
            (None, None) => format!("{}: {}", rec.path, rec.label),
        };
        ctx.emit(human, &rec)?;
    }
    Ok(if detected {
        EXIT_DETECTED
    } else if failed {
        EXIT_ERROR
    } else {
        EXIT_OK
    })
}

fn rule_suffix(rules: &[String]) -> String {
    if rules.is_empty() {
        String::new()
    } else {
        format!(", rules {}", rules.join(","))
    }
}

fn predict_flow(
    ctx: &mut Ctx,
    model: &Path,
    pcap: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> Result<i32> {
    let classifier = load_flow_classifier(model)?;
    let records = match (pcap, csv) {
        (Some(p), _) => {
            let read = read_pcap(&p)?;
            let flows = assemble_flows(
                &read.packets,
                DEFAULT_FLOW_TIMEOUT,
                DEFAULT_ACTIVITY_TIMEOUT,
            );
            extract_features(&flows)
        }
        (None, Some(c)) => read_flow_csvs(ctx, &[c])?,
        (None, None) => bail!("pass --pcap or --csv"),
    };
    let inputs: Vec<ModelInputs> = records.iter().map(model_inputs).collect();
    let preds = classifier.classify(&inputs)?;
    let mut detected = false;
    for (r, p) in records.iter().zip(&preds) {
        let class = if p.class == 1 { "webshell" } else { "benign" };
        detected |= p.class == 1;
        ctx.emit(
            || format!("{}: {class} (p={:.4})", r.flow_id, p.p_webshell),
            json!({"flow_id": r.flow_id, "src_ip": r.src_ip, "dst_ip": r.dst_ip, "dst_port": r.dst_port,
                   "class": class, "p_webshell": p.p_webshell}),
        )?;
    }
    Ok(if detected { EXIT_DETECTED } else { EXIT_OK })
}

fn flows_extract(
    ctx: &mut Ctx,
    pcaps: &[PathBuf],
    out: Option<&Path>,
    jsonl: bool,
    (flow_timeout, activity_timeout): (f64, f64),
    label: Option<String>,
) -> Result<i32> {
    if !(flow_timeout > 0.0 && activity_timeout > 0.0) {
        bail!("timeouts must be positive");
    }
    let mut records = Vec::new();
    for p in pcaps {
        let read = read_pcap(p)?;
        if read.skipped > 0 {
            ctx.note(format!(
                "{}: {} packets skipped (not IPv4 TCP/UDP)",
                p.display(),
                read.skipped
            ));
        }
        let flows = assemble_flows(
            &read.packets,
            (flow_timeout * 1e6) as i64,
            (activity_timeout * 1e6) as i64,
        );
        records.extend(extract_features(&flows));
    }
    if let Some(l) = label {
        records.iter_mut().for_each(|r| r.label = Some(l.clone()));
    }
    match (out, jsonl) {
        (Some(path), false) => write_csv(path, &records)?,
        (Some(path), true) => {
            let f = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_jsonl(std::io::BufWriter::new(f), &records)?;
        }
        (None, false) => write_csv_to(&mut *ctx.out, &records)?,
        (None, true) => write_jsonl(&mut *ctx.out, &records)?,
    }
    ctx.note(format!("{} flows", records.len()));
    Ok(EXIT_OK)
}

fn eval_metrics(ctx: &mut Ctx, cm: ConfusionMatrix) -> Result<i32> {
    let m = metrics(&cm)?.rounded();
    let human = || {
        let mut s = format!(
            "accuracy    {:.2}\nprecision   {:.2}\nrecall      {:.2}\nspecificity {:.2}\nf1          {:.2}\nfpr         {:.2}\nfnr         {:.2}",
            m.accuracy, m.precision, m.recall, m.specificity, m.f1, m.fpr, m.fnr
        );
        if !m.undefined.is_empty() {
            s.push_str(&format!(
                "\nundefined (reported as 0): {}",
                m.undefined.join(", ")
            ));
        }
        s
    };
    ctx.emit(human, &m)?;
    Ok(EXIT_OK)
}

fn eval_kfold(ctx: &mut Ctx, csvs: &[PathBuf], k: usize, tab: &TabularArgs) -> Result<i32> {
    let cfg = tabular_config(ctx, tab)?;
    let records = read_flow_csvs(ctx, csvs)?;
    let report = kfold_cv(&records, k, &cfg)?;
    let human = || {
        let mut s = String::new();
        for f in &report.folds {
            s.push_str(&format!(
                "fold {}  accuracy {:.2}  precision {:.2}  recall {:.2}  f1 {:.2}\n",
                f.fold, f.metrics.accuracy, f.metrics.precision, f.metrics.recall, f.metrics.f1
            ));
        }
        let a = report.average.rounded();
        s.push_str(&format!(
            "mean    accuracy {:.2}  precision {:.2}  recall {:.2}  f1 {:.2}",
            a.accuracy, a.precision, a.recall, a.f1
        ));
        s
    };
    ctx.emit(human, &report)?;
    Ok(EXIT_OK)
}

fn accuracy(labels: &[usize], predicted: impl Iterator<Item = usize>) -> f64 {
    let hits = labels
        .iter()
        .zip(predicted)
        .filter(|(a, b)| **a == *b)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn tune(
    ctx: &mut Ctx,
    space: &Path,
    flows: Option<&Path>,
    corpus: Option<&Path>,
    language: Option<Language>,
    k: usize,
    samples: Option<usize>,
) -> Result<i32> {
    let text =
        std::fs::read_to_string(space).with_context(|| format!("reading {}", space.display()))?;
    let space: SearchSpace =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", space.display()))?;
    let seed = ctx.seed;
    let merge = |base: Value, point: &Value| -> Result<Value, String> {
        let mut v = base;
        let obj = v.as_object_mut().expect("configs serialize to objects");
        for (key, x) in point.as_object().into_iter().flatten() {
            if !obj.contains_key(key) {
                return Err(format!("unknown parameter {key:?}"));
            }
            obj.insert(key.clone(), x.clone());
        }
        Ok(v)
    };

    let outcome = if let Some(flows) = flows {
        let records = read_flow_csvs(ctx, &[flows.to_path_buf()])?;
        let labels = records
            .iter()
            .map(|r| r.label_value().context("every flow needs a label"))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<ModelInputs> = records.iter().map(model_inputs).collect();
        let folds = stratified_folds(&labels, k, seed)?;
        let base = serde_json::to_value(ctx.overlay(TabularConfig {
            seed,
            ..TabularConfig::default()
        })?)?;
        let eval = |point: &Value, fold: usize| -> Result<f64, String> {
            let cfg: TabularConfig =
                serde_json::from_value(merge(base.clone(), point)?).map_err(|e| e.to_string())?;
            let train = fold_train_indices(&folds, fold);
            let pick = |idx: &[usize]| -> (Vec<ModelInputs>, Vec<usize>) {
                idx.iter().map(|&i| (inputs[i].clone(), labels[i])).unzip()
            };
            let (xs, ys) = pick(&train);
            let (tx, ty) = pick(&folds[fold]);
            let (model, _) = train_dnn_inputs(&xs, &ys, &cfg).map_err(|e| e.to_string())?;
            let preds = dnn_predict(&model, &tx).map_err(|e| e.to_string())?;
            Ok(accuracy(&ty, preds.iter().map(|p| p.class)))
        };
        search(&space, k, samples, seed, eval)?
    } else {
        let corpus = corpus.context("pass --flows or --corpus")?;
        let language = language.context("--corpus needs --language")?;
        let data = read_corpus_csv(corpus)?;
        let max_length = data.max_length().context("corpus is empty")?;
        let vocab = OpcodeVocabulary::builtin(language);
        let folds = stratified_folds(&data.labels, k, seed)?;
        let base = CnnConfig {
            max_length,
            seed,
            ..CnnConfig::for_language(language, vocab.len())
        };
        let base = serde_json::to_value(ctx.overlay(base)?)?;
        let eval = |point: &Value, fold: usize| -> Result<f64, String> {
            let cfg: CnnConfig =
                serde_json::from_value(merge(base.clone(), point)?).map_err(|e| e.to_string())?;
            let pick = |idx: &[usize]| -> (Vec<OciVector>, Vec<usize>) {
                idx.iter()
                    .map(|&i| (data.rows[i].clone(), data.labels[i]))
                    .unzip()
            };
            let (xs, ys) = pick(&fold_train_indices(&folds, fold));
            let (tx, ty) = pick(&folds[fold]);
            let (graph, _) = train_cnn(&xs, &ys, &cfg).map_err(|e| e.to_string())?;
            let p = cnn_predict_batch(&graph, &tx).map_err(|e| e.to_string())?;
            Ok(accuracy(&ty, p.iter().map(|(b, w)| usize::from(w >= b))))
        };
        search(&space, k, samples, seed, eval)?
    };

    for f in &outcome.failures {
        ctx.note(format!("trial {} failed: {}", f.config, f.error));
    }
    for t in &outcome.leaderboard {
        ctx.emit(|| format!("{:.4}  {}", t.score, t.config), t)?;
    }
    match &outcome.best {
        Some(b) => ctx.note(format!("best {:.4}: {}", b.score, b.config)),
        None => bail!("every trial failed"),
    }
    Ok(EXIT_OK)
}

fn search<F>(
    space: &SearchSpace,
    k: usize,
    samples: Option<usize>,
    seed: u64,
    eval: F,
) -> Result<crate::evalkit::SearchOutcome>
where
    F: Fn(&Value, usize) -> Result<f64, String> + Sync,
{
    Ok(match samples {
        Some(n) => random_search(space, n, seed, k, eval)?,
        None => grid_search(space, k, eval)?,
    })
}

fn dataset_dedup(ctx: &mut Ctx, root: &Path, manifest: Option<&Path>) -> Result<i32> {
    let files = list_files(root)?;
    let outcome = dedup(&files);
    for d in &outcome.duplicates {
        ctx.emit(
            || format!("{} duplicates {}", d.path.display(), d.kept.display()),
            json!({"path": d.path, "kept": d.kept, "hash": d.hash}),
        )?;
    }
    for (p, e) in &outcome.failures {
        ctx.note(format!("{}: {e}", p.display()));
    }
    if let Some(m) = manifest {
        let rows: Vec<ManifestRow> = outcome
            .unique
            .iter()
            .map(|(p, h)| ManifestRow {
                path: p.display().to_string(),
                source: String::new(),
                split: String::new(),
                hash: h.clone(),
            })
            .collect();
        write_manifest(&rows, m)?;
    }
    ctx.note(format!(
        "{} files, {} unique, {} duplicates",
        files.len(),
        outcome.unique.len(),
        outcome.duplicates.len()
    ));
    Ok(EXIT_OK)
}

/// Items under each directory; the first path component below it names the
/// source (files directly inside belong to the directory's own name).
fn dataset_items(dirs: &[PathBuf], label: usize) -> Result<Vec<DatasetItem>> {
    let mut items = Vec::new();
    for d in dirs {
        let own = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for p in list_files(d)? {
            let rel = p.strip_prefix(d).unwrap_or(&p);
            let source = if rel.components().count() > 1 {
                rel.components()
                    .next()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .unwrap_or_default()
            } else {
                own.clone()
            };
            items.push(DatasetItem {
                path: p,
                label,
                source,
            });
        }
    }
    Ok(items)
}

fn dataset_split(
    ctx: &mut Ctx,
    benign: &[PathBuf],
    webshell: &[PathBuf],
    ratio: f64,
    by_source: bool,
    out: &Path,
) -> Result<i32> {
    let mut items = dataset_items(benign, 0)?;
    items.extend(dataset_items(webshell, 1)?);
    let split = split_dataset(&items, ratio, ctx.seed, by_source)?;
    let mut rows = Vec::new();
    for (name, part) in [("train", &split.train), ("test", &split.test)] {
        for it in part.iter() {
            let bytes = std::fs::read(&it.path)
                .with_context(|| format!("reading {}", it.path.display()))?;
            rows.push(ManifestRow {
                path: it.path.display().to_string(),
                source: it.source.clone(),
                split: name.into(),
                hash: crate::content_hash(&bytes),
            });
        }
    }
    write_manifest(&rows, out)?;
    let count =
        |part: &[DatasetItem], label: usize| part.iter().filter(|i| i.label == label).count();
    let summary = json!({
        "train": {"benign": count(&split.train, 0), "webshell": count(&split.train, 1)},
        "test": {"benign": count(&split.test, 0), "webshell": count(&split.test, 1)},
        "out": out,
    });
    ctx.emit(
        || {
            format!(
                "train {} ({} webshell), test {} ({} webshell) -> {}",
                split.train.len(),
                count(&split.train, 1),
                split.test.len(),
                count(&split.test, 1),
                out.display()
            )
        },
        summary,
    )?;
    Ok(EXIT_OK)
}

fn dataset_clean(ctx: &mut Ctx, rules: &Path, candidates: &Path) -> Result<i32> {
    let set = load_rules_path(rules)?;
    let files = list_files(candidates)?;
    let outcome = clean_webshell_candidates(&files, &set);
    for (p, names) in &outcome.confirmed {
        ctx.emit(
            || format!("confirmed {}: {}", p.display(), names.join(", ")),
            json!({"path": p, "status": "confirmed", "rules": names}),
        )?;
    }
    for p in &outcome.needs_review {
        ctx.emit(
            || format!("review    {}", p.display()),
            json!({"path": p, "status": "needs_review"}),
        )?;
    }
    for (p, e) in &outcome.failures {
        ctx.note(format!("{}: {e}", p.display()));
    }
    Ok(if outcome.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_ERROR
    })
}

fn inspector_config(
    ctx: &Ctx,
    model: Option<PathBuf>,
    rules_dir: Option<PathBuf>,
    mode: Option<ModeArg>,
    socket: Option<PathBuf>,
    spool_dir: Option<PathBuf>,
) -> Result<InspectorConfig> {
    let mut c = InspectorConfig::load(ctx.config.as_deref())?;
    if ctx.seed != 0 {
        c.seed = ctx.seed;
    }
    c.model_path = model.or(c.model_path);
    c.rules_dir = rules_dir.unwrap_or(c.rules_dir);
    c.mode = mode.map(Into::into).unwrap_or(c.mode);
    c.socket_path = socket.unwrap_or(c.socket_path);
    c.spool_dir = spool_dir.or(c.spool_dir);
    c.validate()?;
    Ok(c)
}

fn inspect_once(ctx: &mut Ctx, pcap: &Path, config: InspectorConfig) -> Result<i32> {
    let model_path = config
        .model_path
        .clone()
        .context("no model: pass --model or set model_path")?;
    let model = load_flow_classifier(&model_path)?;
    let mut state = InspectorState::resume(&config)?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as i64);
    let result = inspect_pcap(pcap, model.as_ref(), &config, &mut state, now)?;
    if !result.rules.is_empty() {
        write_rules(state.rules.rules(), &config.rules_dir)?;
    }
    emit_eve(&result.alerts, &mut *ctx.out)?;
    if let (Some(log), false) = (&config.eve_log, result.alerts.is_empty()) {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(log)
            .with_context(|| format!("opening {}", log.display()))?;
        emit_eve(&result.alerts, f)?;
    }
    let s = &result.stats;
    ctx.note(format!(
        "{} flows, {} webshell, {} rules updated in {}",
        s.flows,
        s.webshell,
        result.rules.len(),
        config.rules_dir.join(RULE_FILE).display()
    ));
    Ok(if result.alerts.is_empty() {
        EXIT_OK
    } else {
        EXIT_DETECTED
    })
}

fn inspect_serve(ctx: &mut Ctx, config: InspectorConfig) -> Result<i32> {
    let model_path = config
        .model_path
        .clone()
        .context("no model: pass --model or set model_path")?;
    let model = load_flow_classifier(&model_path)?;
    let state = InspectorState::resume(&config)?;
    let server = Server::bind(&config.socket_path)?;
    ctx.note(format!("listening on {}", server.path().display()));
    let daemon = Arc::new(Daemon::new(config, model, state));
    server.run(daemon, Arc::new(AtomicBool::new(false)))?;
    Ok(EXIT_OK)
}
