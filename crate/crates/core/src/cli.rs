//! `qclass train | eval | predict | gradcheck`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 failed
//! check.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config;
use crate::container::{load_classifier, save_classifier, tier_path, ModelContainer};
use crate::dataset::{load_dataset, LabelTaxonomy, QuestionRecord};
use crate::embeddings::{load_embeddings, tokenize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::hierarchy::{train_tier, train_two_tier, Tier, TierEmbeddings};
use crate::numerics::DEFAULT_FD_EPS;
use crate::report::RunReport;
use crate::training::{
    gradient_check, gradient_check_with, EpochStats, TrainConfig, GRADCHECK_TOLERANCE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qclass", version, about = "Two-tier CNN question classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the coarse model and the six fine models.
    Train(TrainArgs),
    /// Evaluate a trained model directory on a labelled file.
    Eval(EvalArgs),
    /// Classify questions from --text or standard input.
    Predict(PredictArgs),
    /// Compare hand-derived gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Pretrained vectors for the coarse tier (and the fine tier by default).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Separate pretrained vectors for the fine tier.
    #[arg(long)]
    pub embeddings_tier2: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_file: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Train only the coarse model.
    #[arg(long, conflicts_with = "tier2_only")]
    pub tier1_only: bool,
    /// Train only the fine model of one coarse category.
    #[arg(long, value_name = "COARSE")]
    pub tier2_only: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub test_file: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Where to write the JSON report (default: <model-dir>/report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Question to classify; may be repeated. Reads stdin lines otherwise.
    #[arg(long)]
    pub text: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Negate one gradient term before comparing (mutation check).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Predict(a) => cmd_predict(&a, stdin, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn token_set<'a>(texts: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    texts.into_iter().flat_map(tokenize).collect()
}

struct LoadedEmbeddings {
    tier1: EmbeddingTable,
    tier2: Option<EmbeddingTable>,
}

impl LoadedEmbeddings {
    fn load(args: &EmbeddingArgs, vocab: &HashSet<String>) -> Result<Self> {
        let tier1 = load_embeddings(&args.embeddings, None, Some(vocab))?;
        let tier2 = match &args.embeddings_tier2 {
            Some(p) if p != &args.embeddings => Some(load_embeddings(p, None, Some(vocab))?),
            _ => None,
        };
        Ok(LoadedEmbeddings { tier1, tier2 })
    }

    fn tiers(&self) -> TierEmbeddings<'_> {
        TierEmbeddings {
            tier1: &self.tier1,
            tier2: self.tier2.as_ref().unwrap_or(&self.tier1),
        }
    }
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => config::load_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.filters {
        config.filters = v;
    }
    if let Some(v) = args.hidden {
        config.hidden = v;
    }
    if let Some(v) = args.max_len {
        config.max_len = v;
    }
    config.validate()?;
    Ok(config)
}

fn history_line(taxonomy: &LabelTaxonomy, tier: Tier, s: &EpochStats) -> String {
    let name = match tier {
        Tier::Coarse => "tier1".to_string(),
        Tier::Fine(c) => format!("tier2-{}", taxonomy.coarse_name(c).to_ascii_lowercase()),
    };
    let valid = s
        .validation_accuracy
        .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    format!(
        "{name}\t{}\t{:.6}\t{:.4}\t{valid}",
        s.epoch, s.mean_loss, s.train_accuracy
    )
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = resolve_train_config(args)?;
    let taxonomy = LabelTaxonomy::uiuc();
    let records = load_dataset(&args.train_file, &taxonomy)?;
    if records.is_empty() {
        return Err(Error::Empty(format!(
            "{} has no records",
            args.train_file.display()
        )));
    }
    let vocab = token_set(records.iter().map(|r| r.text.as_str()));
    let embeddings = LoadedEmbeddings::load(&args.embeddings, &vocab)?;
    let tiers = embeddings.tiers();
    fs::create_dir_all(&args.model_dir).map_err(|e| Error::io(&args.model_dir, e))?;

    let mut log = String::from("model\tepoch\tmean_loss\ttrain_accuracy\tvalidation_accuracy\n");
    let _ = out.write_all(log.as_bytes());
    let mut on_epoch = |tier: Tier, s: &EpochStats| {
        let line = history_line(&taxonomy, tier, s);
        let _ = writeln!(out, "{line}");
        log.push_str(&line);
        log.push('\n');
    };

    let single = if args.tier1_only {
        Some(Tier::Coarse)
    } else if let Some(name) = &args.tier2_only {
        let c = taxonomy.coarse_index(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown coarse category {name:?}; expected one of {}",
                taxonomy
                    .categories()
                    .iter()
                    .map(|c| c.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        Some(Tier::Fine(c))
    } else {
        None
    };

    match single {
        Some(tier) => {
            let table = match tier {
                Tier::Coarse => tiers.tier1,
                Tier::Fine(_) => tiers.tier2,
            };
            let (model, _) = train_tier(&records, &taxonomy, table, &config, tier, &mut on_epoch)?;
            ModelContainer::new(model, tier, taxonomy.clone(), config.clone()).save(tier_path(
                &args.model_dir,
                tier,
                &taxonomy,
            ))?;
        }
        None => {
            let (classifier, _) =
                train_two_tier(&records, &taxonomy, tiers, &config, &mut on_epoch)?;
            save_classifier(&args.model_dir, &classifier, &config)?;
        }
    }
    write_file(&args.model_dir.join("history.tsv"), log.as_bytes())?;
    write_file(
        &args.model_dir.join("config.txt"),
        config::render(&config).as_bytes(),
    )?;
    Ok(EXIT_OK)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_dims(tiers: TierEmbeddings<'_>, tier1_dim: usize, tier2_dim: usize) -> Result<()> {
    for (name, table, want) in [
        ("tier 1", tiers.tier1, tier1_dim),
        ("tier 2", tiers.tier2, tier2_dim),
    ] {
        if table.dim() != want {
            return Err(Error::InvalidArgument(format!(
                "{name} embeddings have dimension {}, model expects {want}",
                table.dim()
            )));
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let (classifier, _) = load_classifier(&args.model_dir)?;
    let records: Vec<QuestionRecord> = load_dataset(&args.test_file, classifier.taxonomy())
        .map_err(|e| match e {
            Error::Parse {
                path,
                line,
                message,
            } if message.starts_with("unknown label") => {
                Error::TaxonomyMismatch(format!("{}:{line}: {message}", path.display()))
            }
            other => other,
        })?;
    if records.is_empty() {
        return Err(Error::Empty(format!(
            "{} has no records",
            args.test_file.display()
        )));
    }
    let vocab = token_set(records.iter().map(|r| r.text.as_str()));
    let embeddings = LoadedEmbeddings::load(&args.embeddings, &vocab)?;
    check_dims(
        embeddings.tiers(),
        classifier.tier1().dim(),
        classifier.tier2(0).dim(),
    )
    .map_err(|e| Error::TaxonomyMismatch(e.to_string()))?;
    let metrics = classifier.evaluate(&records, embeddings.tiers())?;
    let dataset = args.test_file.file_name().map_or_else(
        || args.test_file.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    );
    let report = RunReport::from_metrics(dataset, &metrics);
    let _ = out.write_all(report.render_table().as_bytes());
    let path = args
        .report
        .clone()
        .unwrap_or_else(|| args.model_dir.join("report.json"));
    write_file(&path, report.to_json().as_bytes())?;
    Ok(EXIT_OK)
}

pub fn cmd_predict(
    args: &PredictArgs,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<i32> {
    let questions: Vec<String> = if args.text.is_empty() {
        let mut lines = Vec::new();
        for line in stdin.lines() {
            let line = line.map_err(|e| Error::io("<stdin>", e))?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        lines
    } else {
        args.text.clone()
    };
    if questions.is_empty() {
        return Err(Error::InvalidArgument("no questions given".into()));
    }
    let (classifier, _) = load_classifier(&args.model_dir)?;
    let vocab = token_set(questions.iter().map(String::as_str));
    let embeddings = LoadedEmbeddings::load(&args.embeddings, &vocab)?;
    check_dims(
        embeddings.tiers(),
        classifier.tier1().dim(),
        classifier.tier2(0).dim(),
    )?;
    for q in &questions {
        let p = classifier.classify(q, embeddings.tiers())?;
        let (coarse, fine) = classifier.label_names(p);
        let _ = writeln!(out, "{coarse}\t{fine}");
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let worst = if args.corrupt_gradient {
        gradient_check_with(args.trials, args.seed, DEFAULT_FD_EPS, |g| {
            if let Some(last) = g.tensors.last_mut() {
                last[0] = -last[0];
            }
        })?
    } else {
        gradient_check(args.trials, args.seed)?
    };
    let _ = writeln!(
        out,
        "worst relative error over {} trials: {worst:.3e}",
        args.trials
    );
    if worst < GRADCHECK_TOLERANCE {
        let _ = writeln!(out, "PASS (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "FAIL (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(EXIT_CHECK)
    }
}
