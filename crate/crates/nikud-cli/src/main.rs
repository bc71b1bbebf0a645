//! Command-line pipeline: `split`, `train`, `predict`, `eval`,
//! `pack-stats`. Exit codes: 0 ok, 1 internal error, 2 usage/config
//! error, 3 data mismatch.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use nikud::corpus::{self, Document};
use nikud::hebrew::AnalysisMode;
use nikud::infer::{self, InferOptions};
use nikud::metrics::{self, EvalDoc, MetricsError, VocEquivalence, VocEquivalenceFile};
use nikud::model::{CharVocab, ModelParams, TrainingConfig};
use nikud::train::{self, TrainError, TrainerState};
use nikud::{checkpoint, DatasetSplit};

#[derive(Parser)]
#[command(name = "nikud", about = "Hebrew diacritization pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus into train/validation/test and write a manifest.
    Split(SplitArgs),
    /// Train a model from a config file and a split manifest.
    Train(TrainArgs),
    /// Diacritize text from a file or stdin.
    Predict(PredictArgs),
    /// Score predictions against gold documents.
    Eval(EvalArgs),
    /// Report padding saved by sentence packing.
    PackStats(PackStatsArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Corpus root: <root>/<genre>/<file>.txt
    #[arg(long)]
    corpus: PathBuf,
    /// train,validation,test ratios
    #[arg(long, default_value = "0.9,0.05,0.05")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest output path (<split>\t<doc-id> lines)
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    max_length: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file with TrainingConfig fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and logs
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Resume from a checkpoint written by a previous run
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Fail on stray diacritics instead of dropping them
    #[arg(long)]
    strict: bool,
    /// Print parameter counts and exit
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input file; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    max_length: usize,
    /// Always put a shin or sin dot on ש
    #[arg(long)]
    force_shin_dot: bool,
    /// Report characters/second on stderr
    #[arg(long)]
    time: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Pronunciation-equivalence table (JSON); built-in default otherwise
    #[arg(long)]
    voc: Option<PathBuf>,
    /// Report file prefix; writes <prefix>.csv and <prefix>.txt
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PackStatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1024)]
    max_length: usize,
}

enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::PackStats(args) => cmd_pack_stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("bad --ratios '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "--ratios needs three comma-separated values, got '{s}'"
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn load_corpus(root: &Path, max_length: usize, mode: AnalysisMode) -> Result<Vec<Document>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!(
            "corpus directory {} does not exist",
            root.display()
        )));
    }
    corpus::load_corpus(root, max_length, mode).map_err(internal)
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let ratios = parse_ratios(&args.ratios)?;
    let docs = load_corpus(&args.corpus, args.max_length, AnalysisMode::Lenient)?;
    let split = corpus::split_dataset(docs, ratios, args.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(&args.out, corpus::manifest_string(&split)).map_err(internal)?;
    eprintln!(
        "split: {} train, {} validation, {} test (seed {})",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        args.seed
    );
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainingConfig, CliError> {
    let mut config = match path {
        None => TrainingConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if config.dropout < 0.0 {
        config.dropout = 0.0;
    }
    Ok(config)
}

fn apply_manifest(docs: Vec<Document>, manifest: &Path) -> Result<DatasetSplit, CliError> {
    let text = fs::read_to_string(manifest)
        .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let entries = corpus::parse_manifest(&text);
    let mut split = DatasetSplit {
        train: vec![],
        validation: vec![],
        test: vec![],
        seed: 0,
        warnings: vec![],
    };
    let mut by_id: std::collections::BTreeMap<String, Document> =
        docs.into_iter().map(|d| (d.id.clone(), d)).collect();
    for (name, id) in entries {
        let doc = by_id.remove(&id).ok_or_else(|| {
            CliError::Data(format!("manifest references unknown document {id}"))
        })?;
        match name.as_str() {
            "train" => split.train.push(doc),
            "validation" => split.validation.push(doc),
            "test" => split.test.push(doc),
            other => {
                return Err(CliError::Data(format!(
                    "manifest split '{other}' for {id} is not train/validation/test"
                )))
            }
        }
    }
    Ok(split)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    let vocab = CharVocab::standard();

    if args.dry_run {
        let params = ModelParams::init(&config, &vocab, config.seed);
        println!("parameters: {}", params.param_count());
        println!(
            "embedding: {}x{} (frozen: {})",
            params.vocab, params.embed, params.encoder_frozen
        );
        println!("hidden size: {} per direction", params.hidden);
        return Ok(());
    }

    let mode = if args.strict {
        AnalysisMode::Strict
    } else {
        AnalysisMode::Lenient
    };
    let docs = load_corpus(&args.corpus, config.max_length, mode)?;
    let split = apply_manifest(docs, &args.manifest)?;
    fs::create_dir_all(&args.out).map_err(internal)?;

    // violation log: <file>:<line>:<col> <codepoint> on <letter>
    let mut violations = String::new();
    for doc in split.train.iter().chain(&split.validation).chain(&split.test) {
        for (line, v) in &doc.violations {
            violations.push_str(&format!("{}:{}:{} {}\n", doc.id, line, v.position + 1, v));
        }
    }
    if !violations.is_empty() {
        fs::write(args.out.join("violations.log"), &violations).map_err(internal)?;
    }

    let train_packs =
        corpus::pack_documents(&split.train, config.max_length, &vocab).map_err(internal)?;
    let dev_packs =
        corpus::pack_documents(&split.validation, config.max_length, &vocab).map_err(internal)?;

    let resume = match &args.resume {
        None => None,
        Some(path) => {
            let (params, extra) = checkpoint::load(path, &vocab)
                .map_err(|e| CliError::Usage(format!("resume {}: {e}", path.display())))?;
            Some(TrainerState::from_parts(params, &extra).ok_or_else(|| {
                CliError::Usage(format!(
                    "checkpoint {} has no trainer state",
                    path.display()
                ))
            })?)
        }
    };

    let save_state = |state: &TrainerState, name: &str| -> Result<(), CliError> {
        checkpoint::save(
            &state.params,
            &vocab,
            &state.encode_extra(),
            &args.out.join(name),
        )
        .map_err(internal)
    };

    match train::train(&config, &train_packs, &dev_packs, resume) {
        Ok(outcome) => {
            outcome.log.write_csvs(&args.out).map_err(internal)?;
            let best_state = TrainerState {
                params: outcome.best.clone(),
                optimizer: outcome.state.optimizer.clone(),
                completed_epochs: outcome.best_epoch,
            };
            save_state(&best_state, "best.ckpt")?;
            save_state(&outcome.state, "last.ckpt")?;
            let last_epoch = outcome.log.epochs.last();
            if let Some(e) = last_epoch {
                eprintln!(
                    "trained {} epochs; dev letter acc {:.4}, word acc {:.4} (best epoch {})",
                    e.epoch, e.letter_acc, e.word_acc, outcome.best_epoch
                );
            }
            Ok(())
        }
        Err(TrainError::EmptyDataset) => Err(CliError::Usage("training set is empty".into())),
        Err(TrainError::DivergenceDetected { step, loss, last_good }) => {
            checkpoint::save(&last_good, &vocab, &[], &args.out.join("last.ckpt"))
                .map_err(internal)?;
            Err(CliError::Internal(format!(
                "divergence at step {step} (loss {loss}); last good checkpoint written"
            )))
        }
        Err(e) => Err(internal(e)),
    }
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let vocab = CharVocab::standard();
    let (params, _extra) = checkpoint::load(&args.checkpoint, &vocab)
        .map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let opts = InferOptions {
        max_length: args.max_length,
        force_shin_dot: args.force_shin_dot,
        ..InferOptions::default()
    };

    let input = match &args.input {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(internal)?;
            buf
        }
    };

    let start = Instant::now();
    let mut out = String::with_capacity(input.len() * 2);
    let mut chars = 0usize;
    for line in input.lines() {
        chars += line.chars().count();
        let diacritized = infer::diacritize(&params, line, &opts).map_err(internal)?;
        out.push_str(&diacritized);
        out.push('\n');
    }
    if input.is_empty() {
        out.clear();
    }
    let elapsed = start.elapsed();

    match &args.output {
        Some(p) => fs::write(p, &out).map_err(internal)?,
        None => {
            std::io::stdout()
                .write_all(out.as_bytes())
                .map_err(internal)?;
        }
    }
    if args.time {
        let secs = elapsed.as_secs_f64().max(1e-9);
        eprintln!("{chars} chars in {secs:.3}s ({:.0} chars/sec)", chars as f64 / secs);
    }
    Ok(())
}

fn read_eval_docs(root: &Path) -> Result<Vec<EvalDoc>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!(
            "directory {} does not exist",
            root.display()
        )));
    }
    let mut docs = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    let mut files = Vec::new();
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(internal)? {
            let path = entry.map_err(internal)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "txt") {
                files.push(path);
            }
        }
    }
    files.sort();
    for path in files {
        let rel = path.strip_prefix(root).unwrap_or(&path);
        let id = rel.with_extension("").display().to_string();
        let genre = rel
            .components()
            .next()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .filter(|_| rel.components().count() > 1)
            .unwrap_or_else(|| "default".to_string());
        let text = fs::read_to_string(&path).map_err(internal)?;
        let analysis = nikud::hebrew::analyze(&text, AnalysisMode::Lenient).map_err(internal)?;
        docs.push(EvalDoc {
            id,
            genre,
            text: analysis.text,
        });
    }
    Ok(docs)
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let voc = match &args.voc {
        None => VocEquivalence::default_table(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            let file: VocEquivalenceFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("voc table {}: {e}", p.display())))?;
            VocEquivalence::from_file(&file).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let gold = read_eval_docs(&args.gold)?;
    let pred = read_eval_docs(&args.pred)?;
    let report = metrics::evaluate_corpus(&gold, &pred, &voc).map_err(|e| match e {
        MetricsError::AlignmentError { .. }
        | MetricsError::LengthMismatch { .. }
        | MetricsError::MissingDocument { .. } => CliError::Data(e.to_string()),
        other => CliError::Internal(other.to_string()),
    })?;
    print!("{}", report.table());
    if let Some(prefix) = &args.out {
        let csv_path = prefix.with_extension("csv");
        let txt_path = prefix.with_extension("txt");
        fs::write(&csv_path, report.csv()).map_err(internal)?;
        fs::write(&txt_path, report.table()).map_err(internal)?;
    }
    Ok(())
}

fn cmd_pack_stats(args: PackStatsArgs) -> Result<(), CliError> {
    let vocab = CharVocab::standard();
    let docs = load_corpus(&args.corpus, args.max_length, AnalysisMode::Lenient)?;
    let sentences = corpus::sentences_of(&docs);
    if sentences.is_empty() {
        return Err(CliError::Usage("corpus contains no sentences".into()));
    }
    let packed = corpus::pack(&sentences, args.max_length, &vocab).map_err(internal)?;
    let unpacked = corpus::pack_unpacked(&sentences, args.max_length, &vocab).map_err(internal)?;
    let (pf_packed, pps) = corpus::pack_stats(&packed);
    let (pf_unpacked, _) = corpus::pack_stats(&unpacked);
    println!("sentences: {}", sentences.len());
    println!("packed rows: {} (pad fraction {:.4})", packed.len(), pf_packed);
    println!(
        "unpacked rows: {} (pad fraction {:.4})",
        unpacked.len(),
        pf_unpacked
    );
    println!("packs per sentence: {pps:.4}");
    Ok(())
}
