//! The `s2f` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use crate::config::{parse_override, read_settings, ConfigError, RunConfig};
use crate::corpus::{
    compute_stats, generate_synthetic, import_standoff, read_corpus, standoff, write_corpus,
    write_jsonl, AlignMode, AnnotatedSentence, Entity,
};
use crate::decoder::DecodeConfig;
use crate::eval::{error_dump, throughput, EvalReport};
use crate::model::{Dataset, Model, Preset};
use crate::tensor::Mat;
use crate::training::{train, TrainError};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
/// eval and predict report unreadable checkpoints with this code.
pub const EXIT_CHECKPOINT: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "s2f", version, about = "Nested, overlapping and discontinuous entity extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat JSON file with dotted keys, e.g. {"train.epochs": 40}
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes model.ckpt, train_log.jsonl and config.json to --out
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Score a checkpoint on an annotated corpus
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-token vectors for models reading precomputed embeddings
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Add discontinuous-subset scores
        #[arg(long)]
        subsets: bool,
        /// Add overlap-pattern scores
        #[arg(long)]
        patterns: bool,
        /// Measure decoding speed
        #[arg(long)]
        throughput: bool,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Write false positives and negatives as JSON lines
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Write predicted entities for each input sentence as JSON lines
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Generate a synthetic corpus and its statistics
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Convert one text file with standoff annotations to a corpus record
    Import {
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Snap spans that miss token boundaries instead of failing
        #[arg(long)]
        lenient: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(EXIT_CONFIG, e.to_string())
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Train { common, train, dev } => cmd_train(&common, train, dev),
        Command::Eval {
            common,
            checkpoint,
            data,
            vectors,
            subsets,
            patterns,
            throughput,
            batch_size,
            errors,
        } => cmd_eval(
            &common,
            &checkpoint,
            &data,
            vectors.as_deref(),
            EvalFlags {
                subsets,
                patterns,
                throughput,
                batch_size,
            },
            errors.as_deref(),
        ),
        Command::Predict {
            common,
            checkpoint,
            input,
            vectors,
            batch_size,
        } => cmd_predict(&common, &checkpoint, &input, vectors.as_deref(), batch_size),
        Command::Synth { common } => cmd_synth(&common),
        Command::Import {
            text,
            ann,
            out,
            lenient,
        } => cmd_import(&text, &ann, &out, lenient),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("S2F_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut settings = Vec::new();
    if let Some(path) = &common.config {
        settings.extend(read_settings(path)?);
    }
    for s in &common.set {
        settings.push(parse_override(s)?);
    }
    let mut cfg = RunConfig::preset(common.preset)
        .with_settings(settings.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn echo(cfg: &RunConfig) -> String {
    let text = serde_json::to_string_pretty(&cfg.to_flat_json()).expect("json");
    info!("resolved config:\n{text}");
    text
}

fn read_data(path: &Path) -> Result<Vec<AnnotatedSentence>, Failure> {
    if !path.exists() {
        return Err(fail(EXIT_DATA, format!("corpus {} does not exist", path.display())));
    }
    read_corpus(path).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))
}

/// One JSON array of token vectors per line.
pub fn read_vectors(path: &Path) -> Result<Vec<Mat>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rows: Vec<Vec<f64>> = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(format!("{} line {}: ragged or empty vectors", path.display(), i + 1));
        }
        out.push(Mat::from_rows(&rows));
    }
    Ok(out)
}

fn read_vectors_for(
    path: Option<&Path>,
    sentences: &[AnnotatedSentence],
) -> Result<Option<Vec<Mat>>, Failure> {
    let Some(path) = path else {
        return Ok(None);
    };
    let vectors = read_vectors(path).map_err(|e| fail(EXIT_DATA, e))?;
    if vectors.len() != sentences.len() {
        return Err(fail(
            EXIT_DATA,
            format!(
                "{}: {} vector lines for {} sentences",
                path.display(),
                vectors.len(),
                sentences.len()
            ),
        ));
    }
    Ok(Some(vectors))
}

fn dataset<'a>(sentences: &'a [AnnotatedSentence], vectors: &'a Option<Vec<Mat>>) -> Dataset<'a> {
    match vectors {
        Some(v) => Dataset::with_vectors(sentences, v),
        None => Dataset::new(sentences),
    }
}

fn cmd_train(common: &Common, train_path: Option<PathBuf>, dev_path: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = resolve(common)?;
    if let Some(p) = train_path {
        cfg.data.train = Some(p);
    }
    if let Some(p) = dev_path {
        cfg.data.dev = Some(p);
    }
    let train_file = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| fail(EXIT_CONFIG, "no training corpus (set data.train or --train)"))?;
    let train_set = read_data(&train_file)?;
    let dev_set = match &cfg.data.dev {
        Some(p) => read_data(p)?,
        None => {
            warn!("no dev corpus given; selecting the checkpoint on the training corpus");
            train_set.clone()
        }
    };
    if cfg.model.types.is_empty() {
        let labels: BTreeSet<&str> = train_set
            .iter()
            .flat_map(|s| s.entities())
            .map(|e| e.label.as_str())
            .collect();
        if labels.is_empty() {
            return Err(fail(EXIT_DATA, "training corpus has no entities to learn types from"));
        }
        cfg.model.types = labels.into_iter().map(String::from).collect();
    }
    cfg.model.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    cfg.train.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    let train_vectors = read_vectors_for(cfg.data.train_vectors.as_deref(), &train_set)?;
    let dev_vectors = read_vectors_for(cfg.data.dev_vectors.as_deref(), &dev_set)?;

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let io = |e: std::io::Error| fail(EXIT_DATA, format!("{}: {e}", out.display()));
    fs::create_dir_all(&out).map_err(io)?;
    let echoed = echo(&cfg);
    fs::write(out.join("config.json"), echoed + "\n").map_err(io)?;

    let mut model =
        Model::new(cfg.model.clone(), cfg.train.seed).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    info!(
        "{} parameters, {} training and {} dev sentences",
        model.params.num_scalars(),
        train_set.len(),
        dev_set.len()
    );
    let mut log = BufWriter::new(fs::File::create(out.join("train_log.jsonl")).map_err(io)?);
    let mut log_err = None;
    let outcome = train(
        &mut model,
        dataset(&train_set, &train_vectors),
        dataset(&dev_set, &dev_vectors),
        &cfg.train,
        |entry| {
            info!(
                "epoch {} loss {:.4} dev P {:.4} R {:.4} F1 {:.4} ({:.1}s)",
                entry.epoch, entry.train_loss, entry.dev_p, entry.dev_r, entry.dev_f1, entry.seconds
            );
            let line = serde_json::to_string(entry).expect("json");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_err.get_or_insert(e);
            }
        },
    )
    .map_err(|e| match e {
        TrainError::NonFinite { .. } => fail(EXIT_TRAINING, format!("training aborted: {e}")),
        TrainError::Config(_) => fail(EXIT_CONFIG, e.to_string()),
        _ => fail(EXIT_DATA, e.to_string()),
    })?;
    if let Some(e) = log_err {
        return Err(io(e));
    }
    let meta = CheckpointMeta {
        epoch: outcome.best_epoch,
        dev_f1: outcome.best_dev_f1,
        seed: cfg.train.seed,
    };
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &model, Some(&cfg.train), &meta)
        .map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    info!(
        "best dev F1 {:.4} at epoch {}; wrote {}",
        outcome.best_dev_f1,
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(|e| fail(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))
}

fn decode_config(ckpt: &Checkpoint, cfg: &RunConfig) -> DecodeConfig {
    let mut decode = ckpt
        .train
        .as_ref()
        .map(|t| t.decode_config())
        .unwrap_or_else(DecodeConfig::discontinuous);
    if let Some(t) = cfg.eval.threshold {
        decode.threshold = t;
    }
    decode
}

struct EvalFlags {
    subsets: bool,
    patterns: bool,
    throughput: bool,
    batch_size: Option<usize>,
}

fn cmd_eval(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    vectors: Option<&Path>,
    flags: EvalFlags,
    errors: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = resolve(common)?;
    let ckpt = load(checkpoint)?;
    let golds = read_data(data)?;
    let vectors = read_vectors_for(vectors, &golds)?;
    let data_set = dataset(&golds, &vectors);
    let decode = decode_config(&ckpt, &cfg);
    decode.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    let batch = flags.batch_size.unwrap_or(cfg.eval.batch_size);
    let preds: Vec<Vec<Entity>> = ckpt
        .model
        .predict(&data_set.inputs(), &decode, batch)
        .map_err(|e| fail(EXIT_DATA, e.to_string()))?
        .into_iter()
        .map(|p| p.entities)
        .collect();
    let mut report = EvalReport::new(
        &preds,
        &golds,
        flags.subsets || cfg.eval.subsets,
        flags.patterns || cfg.eval.patterns,
    )
    .map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    if flags.throughput || cfg.eval.throughput {
        report.throughput = Some(
            throughput(&ckpt.model, data_set, &decode, batch)
                .map_err(|e| fail(EXIT_DATA, e.to_string()))?,
        );
    }
    print!("{}", report.table());
    let json = serde_json::to_string_pretty(&report).expect("json");
    match &common.out {
        Some(path) => fs::write(path, json + "\n")
            .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if let Some(path) = errors {
        let dump = error_dump(&preds, &golds).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
        let mut text = String::new();
        for v in dump {
            text.push_str(&v.to_string());
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_predict(
    common: &Common,
    checkpoint: &Path,
    input: &Path,
    vectors: Option<&Path>,
    batch_size: Option<usize>,
) -> Result<(), Failure> {
    let cfg = resolve(common)?;
    let ckpt = load(checkpoint)?;
    let sentences = read_data(input)?;
    let vectors = read_vectors_for(vectors, &sentences)?;
    let data_set = dataset(&sentences, &vectors);
    let decode = decode_config(&ckpt, &cfg);
    decode.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    let preds = ckpt
        .model
        .predict(
            &data_set.inputs(),
            &decode,
            batch_size.unwrap_or(cfg.eval.batch_size),
        )
        .map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    let out: Vec<AnnotatedSentence> = sentences
        .iter()
        .zip(preds)
        .map(|(s, p)| {
            s.with_entities(p.entities)
                .expect("decoded entities lie inside their sentence")
        })
        .collect();
    match &common.out {
        Some(path) => write_corpus(path, &out).map_err(|e| fail(EXIT_DATA, e.to_string()))?,
        None => write_jsonl(std::io::stdout().lock(), &out)
            .map_err(|e| fail(EXIT_DATA, e.to_string()))?,
    }
    Ok(())
}

/// `corpus.jsonl` → `corpus.stats.json`.
pub fn stats_path(out: &Path) -> PathBuf {
    out.with_extension("stats.json")
}

fn cmd_synth(common: &Common) -> Result<(), Failure> {
    let cfg = resolve(common)?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| fail(EXIT_CONFIG, "synth needs --out"))?;
    let seed = cfg.train.seed;
    let corpus = generate_synthetic(&cfg.synth, seed).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    write_corpus(&out, &corpus.sentences).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    let stats: Value = json!({
        "seed": seed,
        "config": cfg.synth,
        "ledger": corpus.ledger,
        "stats": compute_stats(&corpus.sentences),
    });
    let path = stats_path(&out);
    fs::write(&path, serde_json::to_string_pretty(&stats).expect("json") + "\n")
        .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))?;
    info!(
        "wrote {} sentences to {} (seed {seed})",
        corpus.sentences.len(),
        out.display()
    );
    Ok(())
}

fn cmd_import(text: &Path, ann: &Path, out: &Path, lenient: bool) -> Result<(), Failure> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", p.display())))
    };
    let body = read(text)?;
    let anns = standoff::parse_annotations(&read(ann)?).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    let mode = if lenient {
        AlignMode::Lenient
    } else {
        AlignMode::Strict
    };
    let outcome = import_standoff(&body, &anns, mode).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
    for w in &outcome.warnings {
        warn!("{w}");
    }
    write_corpus(out, &[outcome.sentence]).map_err(|e| fail(EXIT_DATA, e.to_string()))
}
