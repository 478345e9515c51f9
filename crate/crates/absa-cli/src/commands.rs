//! Subcommand implementations. Every run records its full effective
//! configuration (flags > config file > defaults) in the output directory.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use absa::corpus::{filter_conflicts, parse_dataset, AspectCatalog, Split};
use absa::embed::{load_embeddings, tokenize, train_subword_skipgram, SkipgramConfig};
use absa::eval::{attach_reference, evaluate, EmbeddingKind, TaskMode};
use absa::model::{
    train_detector, ArchId, DetectorConfig, DetectorParams, ModelConfig, TrainedModel,
};
use absa::train::{random_search, HyperConfig, SearchSpace, TrainHistory};

use crate::config::{pick, FileConfig};
use crate::records::PredictionRecord;

// ── embed-train ───────────────────────────────────────────────────────────

#[derive(Args)]
pub struct EmbedTrainArgs {
    /// Plain-text corpus, one document per line (UTF-8).
    #[arg(long)]
    corpus: PathBuf,
    /// Output embedding file (word2vec text format + ngram rows).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional key=value config file (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn embed_train(args: EmbedTrainArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let defaults = SkipgramConfig::default();
    let cfg = SkipgramConfig {
        dim: pick(args.dim, file.usize("dim")?, defaults.dim),
        window: pick(args.window, file.usize("window")?, defaults.window),
        negatives: pick(args.negatives, file.usize("negatives")?, defaults.negatives),
        epochs: pick(args.epochs, file.usize("epochs")?, defaults.epochs),
        lr: pick(args.lr, file.f64("lr")?, defaults.lr),
        min_count: pick(args.min_count, file.u64("min-count")?, defaults.min_count),
        buckets: pick(args.buckets, file.usize("buckets")?, defaults.buckets),
        seed: pick(args.seed, file.u64("seed")?, defaults.seed),
        ..defaults
    };
    let corpus = std::fs::read_to_string(&args.corpus)
        .with_context(|| format!("reading --corpus {}", args.corpus.display()))?;
    let table = train_subword_skipgram(corpus.lines(), &cfg)
        .with_context(|| format!("training embeddings on {}", args.corpus.display()))?;
    table.save(&args.out)?;
    eprintln!(
        "trained {} word vectors (dim {}, {} buckets) -> {}",
        table.vocab().len(),
        table.dim(),
        table.bucket_count(),
        args.out.display()
    );
    Ok(())
}

// ── shared experiment plumbing ────────────────────────────────────────────

#[derive(Args)]
pub struct ExperimentArgs {
    /// Training split TSV.
    #[arg(long = "train")]
    train_path: PathBuf,
    /// Development split TSV.
    #[arg(long = "dev")]
    dev_path: PathBuf,
    /// Synchronic test split TSV.
    #[arg(long = "test-syn")]
    test_syn_path: Option<PathBuf>,
    /// Diachronic test split TSV.
    #[arg(long = "test-dia")]
    test_dia_path: Option<PathBuf>,
    /// Embedding file (word2vec text format, optional ngram rows).
    #[arg(long)]
    embeddings: PathBuf,
    /// Aspect catalog file, one name per line (defaults to the built-in
    /// 20-category catalog).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Architecture: e2e-cnn | e2e-lstm | pipe-cnn | pipe-lstm.
    #[arg(long)]
    arch: Option<String>,
    /// Output directory for all run artifacts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gradient clipping norm; overrides the per-architecture default.
    #[arg(long, conflicts_with = "no_clip")]
    clip: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    dropout: Option<f64>,
    /// Convolution filters per width.
    #[arg(long)]
    filters: Option<usize>,
    /// LSTM hidden size per direction.
    #[arg(long)]
    hidden: Option<usize>,
    /// Aspect embedding size for the pipeline models.
    #[arg(long)]
    aspect_embed_dim: Option<usize>,
    /// Embedding family for reference-score deltas: word2vec | glove |
    /// fasttext | other (default: inferred from the table).
    #[arg(long)]
    embedding_kind: Option<String>,
    /// Load a trained detector (pipeline architectures).
    #[arg(long, conflicts_with = "train_detector")]
    detector: Option<PathBuf>,
    /// Train the stand-in detector on the training split first (pipeline
    /// architectures).
    #[arg(long)]
    train_detector: bool,
    /// Optional key=value config file (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
}

struct Experiment {
    arch: ArchId,
    catalog: AspectCatalog,
    table: absa::embed::EmbeddingTable,
    model_cfg: ModelConfig,
    hyper: HyperConfig,
    train_docs: Vec<absa::corpus::Document>,
    dev_docs: Vec<absa::corpus::Document>,
    test_syn: Vec<absa::corpus::Document>,
    test_dia: Vec<absa::corpus::Document>,
    detector: Option<DetectorParams>,
    embedding_kind: EmbeddingKind,
    conflict_report: absa::corpus::ConflictReport,
}

fn infer_kind(table: &absa::embed::EmbeddingTable) -> EmbeddingKind {
    if table.bucket_count() > 0 {
        EmbeddingKind::Fasttext
    } else {
        EmbeddingKind::Other
    }
}

fn prepare(args: &ExperimentArgs) -> Result<Experiment> {
    let file = FileConfig::load(args.config.as_deref())?;

    let arch_name = pick(
        args.arch.clone(),
        file.string("arch")?,
        "e2e-cnn".to_string(),
    );
    let arch = ArchId::parse(&arch_name)
        .ok_or_else(|| anyhow!("unknown --arch {arch_name:?} (e2e-cnn|e2e-lstm|pipe-cnn|pipe-lstm)"))?;

    let catalog = match &args.catalog {
        Some(path) => AspectCatalog::load(path)
            .with_context(|| format!("loading --catalog {}", path.display()))?,
        None => AspectCatalog::default_catalog(),
    };

    let table = load_embeddings(&args.embeddings, None)
        .with_context(|| format!("loading --embeddings {}", args.embeddings.display()))?;

    let train_raw = parse_dataset(&args.train_path, &catalog, Split::Train)
        .with_context(|| format!("parsing --train {}", args.train_path.display()))?;
    let (train_docs, conflict_report) = filter_conflicts(train_raw, &catalog);
    let dev_docs = parse_dataset(&args.dev_path, &catalog, Split::Dev)
        .with_context(|| format!("parsing --dev {}", args.dev_path.display()))?;
    let test_syn = match &args.test_syn_path {
        Some(p) => parse_dataset(p, &catalog, Split::TestSyn)
            .with_context(|| format!("parsing --test-syn {}", p.display()))?,
        None => Vec::new(),
    };
    let test_dia = match &args.test_dia_path {
        Some(p) => parse_dataset(p, &catalog, Split::TestDia)
            .with_context(|| format!("parsing --test-dia {}", p.display()))?,
        None => Vec::new(),
    };

    let defaults = HyperConfig::defaults(arch);
    let clip_norm = if args.no_clip || file.bool("no-clip")?.unwrap_or(false) {
        None
    } else {
        args.clip.or(file.f64("clip")?).or(defaults.clip_norm)
    };
    let hyper = HyperConfig {
        arch,
        lr: pick(args.lr, file.f64("lr")?, defaults.lr),
        batch_size: pick(args.batch_size, file.usize("batch-size")?, defaults.batch_size),
        epochs: pick(args.epochs, file.usize("epochs")?, defaults.epochs),
        seed: pick(args.seed, file.u64("seed")?, defaults.seed),
        clip_norm,
        dropout: pick(args.dropout, file.f64("dropout")?, defaults.dropout),
        embedding_source: args.embeddings.display().to_string(),
    };

    let full = ModelConfig::defaults(catalog.len());
    let model_cfg = ModelConfig {
        embed_dim: table.dim(),
        filters_per_width: pick(args.filters, file.usize("filters")?, full.filters_per_width),
        filter_widths: full.filter_widths.clone(),
        hidden: pick(args.hidden, file.usize("hidden")?, full.hidden),
        aspect_embed_dim: pick(
            args.aspect_embed_dim,
            file.usize("aspect-embed-dim")?,
            full.aspect_embed_dim,
        ),
        dropout: hyper.dropout,
        n_aspects: catalog.len(),
    };

    let detector = if arch.is_pipeline() {
        if let Some(path) = &args.detector {
            let json = std::fs::read_to_string(path)
                .with_context(|| format!("loading --detector {}", path.display()))?;
            Some(serde_json::from_str::<DetectorParams>(&json)?)
        } else if args.train_detector {
            let mut det = train_detector(
                &train_docs,
                &table,
                &catalog,
                &DetectorConfig {
                    seed: hyper.seed,
                    ..DetectorConfig::default()
                },
            );
            det.tune_thresholds(&dev_docs, &table);
            Some(det)
        } else {
            bail!(
                "architecture {arch} is a pipeline: pass --detector <file> or --train-detector"
            );
        }
    } else {
        None
    };

    let embedding_kind = match &args.embedding_kind {
        Some(s) => EmbeddingKind::parse(s)
            .ok_or_else(|| anyhow!("unknown --embedding-kind {s:?}"))?,
        None => match file.string("embedding-kind")? {
            Some(s) => EmbeddingKind::parse(&s)
                .ok_or_else(|| anyhow!("unknown embedding-kind {s:?} in config file"))?,
            None => infer_kind(&table),
        },
    };

    Ok(Experiment {
        arch,
        catalog,
        table,
        model_cfg,
        hyper,
        train_docs,
        dev_docs,
        test_syn,
        test_dia,
        detector,
        embedding_kind,
        conflict_report,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn effective_config(exp: &Experiment, args: &ExperimentArgs, command: &str) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "arch": exp.arch.as_str(),
        "paths": {
            "train": args.train_path,
            "dev": args.dev_path,
            "test_syn": args.test_syn_path,
            "test_dia": args.test_dia_path,
            "embeddings": args.embeddings,
            "catalog": args.catalog,
            "out": args.out,
        },
        "hyper": exp.hyper,
        "model": exp.model_cfg,
        "embedding_kind": exp.embedding_kind.as_str(),
        "catalog_hash": format!("{:016x}", exp.catalog.hash()),
        "seed": exp.hyper.seed,
    })
}

// ── train ─────────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let exp = prepare(&args.experiment)?;
    std::fs::create_dir_all(&args.experiment.out)?;
    let out = &args.experiment.out;
    write_json(&out.join("config.json"), &effective_config(&exp, &args.experiment, "train"))?;
    write_json(&out.join("conflict_report.json"), &exp.conflict_report)?;
    if exp.conflict_report.dropped > 0 {
        eprintln!(
            "conflict filter dropped {} of {} training documents",
            exp.conflict_report.dropped, exp.conflict_report.input_count
        );
    }

    let (mut model, history) = absa::train::train(
        exp.arch,
        &exp.model_cfg,
        &exp.catalog,
        exp.table,
        &exp.train_docs,
        &exp.dev_docs,
        &exp.hyper,
        exp.detector
            .as_ref()
            .map(|d| d as &dyn absa::model::AspectDetector),
    )?;
    model.detector = exp.detector;
    if let Some(det) = &model.detector {
        write_json(&out.join("detector.json"), det)?;
    }

    std::fs::write(out.join("history.csv"), history.to_csv())?;
    write_json(&out.join("run_meta.json"), &run_meta(&history))?;
    model.save(&out.join("model.json"))?;

    let mut dev_report = evaluate(&model, &exp.dev_docs, TaskMode::AspectSentiment, None)?;
    attach_reference(&mut dev_report, exp.arch, exp.embedding_kind);
    write_json(&out.join("dev_report.json"), &dev_report)?;
    println!("{}", serde_json::to_string_pretty(&dev_report)?);

    for (docs, name) in [(&exp.test_syn, "test_syn"), (&exp.test_dia, "test_dia")] {
        if docs.is_empty() {
            continue;
        }
        let mut report = evaluate(&model, docs, TaskMode::AspectSentiment, None)?;
        attach_reference(&mut report, exp.arch, exp.embedding_kind);
        write_json(&out.join(format!("{name}_report.json")), &report)?;
    }
    Ok(())
}

/// Wall-clock timings and stopping info. Not covered by the determinism
/// contract, hence kept apart from history.csv.
fn run_meta(history: &TrainHistory) -> serde_json::Value {
    serde_json::json!({
        "epochs_run": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "seconds_per_epoch": history.epochs.iter().map(|e| e.seconds).collect::<Vec<_>>(),
        "total_seconds": history.epochs.iter().map(|e| e.seconds).sum::<f64>(),
    })
}

// ── tune ──────────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct TuneArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Number of random-search trials over the lr × batch-size grid.
    #[arg(long)]
    trials: usize,
}

pub fn tune(args: TuneArgs) -> Result<()> {
    let exp = prepare(&args.experiment)?;
    std::fs::create_dir_all(&args.experiment.out)?;
    let out = &args.experiment.out;
    write_json(&out.join("config.json"), &effective_config(&exp, &args.experiment, "tune"))?;

    let outcome = random_search(
        &SearchSpace::default(),
        args.trials,
        &exp.hyper,
        &exp.model_cfg,
        &exp.catalog,
        &exp.table,
        &exp.train_docs,
        &exp.dev_docs,
        exp.detector
            .as_ref()
            .map(|d| d as &dyn absa::model::AspectDetector),
    )?;
    if outcome.clamped {
        eprintln!(
            "warning: --trials {} exceeds the {}-cell grid; running each cell once",
            args.trials,
            SearchSpace::default().cells().len()
        );
    }

    let mut log = String::new();
    for record in &outcome.trials {
        log.push_str(&serde_json::to_string(record)?);
        log.push('\n');
    }
    std::fs::write(out.join("trials.jsonl"), log)?;
    write_json(&out.join("best_config.json"), &outcome.best)?;
    println!("{}", serde_json::to_string_pretty(&outcome.best)?);
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset TSV to evaluate.
    #[arg(long)]
    data: PathBuf,
    /// Split tag: train | dev | test-syn | test-dia.
    #[arg(long)]
    split: String,
    /// Task: aspect-sentiment | aspect-only.
    #[arg(long, default_value = "aspect-sentiment")]
    task: String,
    /// Embedding family for reference deltas (default: inferred).
    #[arg(long)]
    embedding_kind: Option<String>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let split = Split::parse(&args.split)
        .ok_or_else(|| anyhow!("unknown --split {:?} (train|dev|test-syn|test-dia)", args.split))?;
    let task = TaskMode::parse(&args.task)
        .ok_or_else(|| anyhow!("unknown --task {:?} (aspect-sentiment|aspect-only)", args.task))?;
    let model = TrainedModel::load(&args.model, None)
        .with_context(|| format!("loading --model {}", args.model.display()))?;
    let docs = parse_dataset(&args.data, &model.catalog, split)
        .with_context(|| format!("parsing --data {}", args.data.display()))?;
    let kind = match &args.embedding_kind {
        Some(s) => EmbeddingKind::parse(s)
            .ok_or_else(|| anyhow!("unknown --embedding-kind {s:?}"))?,
        None => infer_kind(&model.table),
    };
    let mut report = evaluate(&model, &docs, task, None)?;
    if report.resolved_conflicts > 0 {
        eprintln!(
            "warning: {} gold conflicts resolved by keeping the first-listed polarity",
            report.resolved_conflicts
        );
    }
    attach_reference(&mut report, model.arch, kind);
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, &json)?;
    }
    println!("{json}");
    Ok(())
}

// ── predict ───────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model, None)
        .with_context(|| format!("loading --model {}", args.model.display()))?;
    let stdin = std::io::stdin();
    let mut reader = stdin.lock();
    let stdout = std::io::stdout();
    let mut writer = std::io::BufWriter::new(stdout.lock());
    let mut buffer = Vec::new();
    let mut lineno = 0usize;

    // Streaming: one line in, one record out, constant memory per line.
    loop {
        buffer.clear();
        let read = reader.read_until(b'\n', &mut buffer)?;
        if read == 0 {
            break;
        }
        lineno += 1;
        let id = format!("line-{lineno}");
        while buffer.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
            buffer.pop();
        }
        let record = match std::str::from_utf8(&buffer) {
            Ok(text) => {
                let tokens = tokenize(text);
                match model.predict(&id, &tokens, None) {
                    Ok(set) => PredictionRecord::from_set(id, &set, &model.catalog),
                    Err(err) => PredictionRecord::failed(id, err.to_string()),
                }
            }
            Err(err) => PredictionRecord::failed(id, format!("invalid UTF-8: {err}")),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

// ── serve ─────────────────────────────────────────────────────────────────

#[derive(Args)]
pub struct ServeArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Port to bind on 127.0.0.1 (0 picks a free port, printed on stdout).
    #[arg(long)]
    port: u16,
    /// Maximum request body size in bytes (413 beyond this).
    #[arg(long, default_value_t = 1_048_576)]
    max_body_bytes: usize,
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model, None)
        .with_context(|| format!("loading --model {}", args.model.display()))?;
    crate::serve::run(model, args.port, args.max_body_bytes)
}
