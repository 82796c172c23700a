use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subjcheck::commands::{evaluation_table, stats_table};
use subjcheck::config::StrategyName;
use subjcheck::{exit_code, Overrides, RunConfig, EXIT_OK, EXIT_PROVIDER};
use subjcheck_core::corpus::ColumnMapping;
use subjcheck_core::{Error, Result};

/// Subjectivity classification with prompted language models.
///
/// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
/// 3 invalid input data, 4 provider failure (or some sentences failed).
#[derive(Parser)]
#[command(name = "subjcheck", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Target split, e.g. dev or dev-test.
    #[arg(long)]
    split: Option<String>,
    /// Target language code.
    #[arg(long)]
    language: Option<String>,
    /// Exemplar selection strategy for every single-prompt classifier.
    #[arg(long, value_enum)]
    strategy: Option<StrategyName>,
    /// Number of exemplars (even).
    #[arg(long)]
    k: Option<usize>,
    /// Seed for random exemplar selection.
    #[arg(long)]
    seed: Option<u64>,
    /// Sentences processed concurrently.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Directory for the response and embedding caches.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Fail on any cache miss instead of calling a provider.
    #[arg(long)]
    offline: bool,
    /// Write outputs here instead of a fresh run-stamped directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl RunFlags {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            split: self.split.clone(),
            language: self.language.clone(),
            strategy: self.strategy,
            k: self.k,
            seed: self.seed,
            parallelism: self.parallelism,
            cache_dir: self.cache_dir.clone(),
            offline: self.offline,
        });
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify the target split and write predictions and transcripts.
    Classify(RunFlags),
    /// Score a predictions TSV against gold labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Where to write the JSON report (default: report.json beside the predictions).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank gold-label disagreements of the configured classifier.
    Audit(RunFlags),
    /// Sentence and class counts per dataset file.
    Stats {
        /// Dataset files; with --config, every configured dataset instead.
        paths: Vec<PathBuf>,
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Show the exemplars chosen for one target sentence.
    Select {
        #[command(flatten)]
        run: RunFlags,
        /// Target sentence id.
        #[arg(long)]
        id: String,
    },
    /// Embed every configured dataset into the embedding cache.
    Embed(RunFlags),
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Classify(flags) => {
            let outcome = subjcheck::cmd_classify(&flags.load()?, flags.run_dir.as_deref())?;
            let c = &outcome.counters;
            println!("run directory: {}", outcome.run_dir.display());
            println!(
                "sentences {}  predicted {}  failed {}  fallbacks {}  calls {}  attempts {}  cache hits {}",
                c.sentences, c.predicted, c.failed, c.fallbacks, c.calls.calls, c.calls.attempts, c.calls.cache_hits
            );
            if let Some(report) = &outcome.report {
                print!("{}", evaluation_table("classify", report));
            }
            for f in &outcome.failures {
                eprintln!("failed {}: {}", f.sentence_id, f.error);
            }
            Ok(if outcome.failures.is_empty() { EXIT_OK } else { EXIT_PROVIDER })
        }
        Command::Evaluate { predictions, gold, report } => {
            let r = subjcheck::cmd_evaluate(&predictions, &gold, &ColumnMapping::default())?;
            let name = predictions.display().to_string();
            print!("{}", evaluation_table(&name, &r));
            let out = report.unwrap_or_else(|| predictions.with_file_name("report.json"));
            std::fs::write(&out, r.to_json()?).map_err(|e| Error::io(&out, e))?;
            Ok(EXIT_OK)
        }
        Command::Audit(flags) => {
            let outcome = subjcheck::cmd_audit(&flags.load()?, flags.run_dir.as_deref())?;
            println!("run directory: {}", outcome.classify.run_dir.display());
            println!("{} disagreement(s)", outcome.report.entries.len());
            print!("{}", outcome.report.to_tsv());
            Ok(if outcome.classify.failures.is_empty() { EXIT_OK } else { EXIT_PROVIDER })
        }
        Command::Stats { paths, config, language, split } => {
            let rows = match config {
                Some(c) => subjcheck::cmd_stats_config(&RunConfig::load(c)?)?,
                None if paths.is_empty() => return Err(Error::Config("give dataset paths or --config".into())),
                None => paths
                    .iter()
                    .map(|p| subjcheck::cmd_stats(p, &ColumnMapping::default(), language.as_deref(), split.as_deref()))
                    .collect::<Result<_>>()?,
            };
            print!("{}", stats_table(&rows));
            for row in &rows {
                for w in &row.warnings {
                    eprintln!("warning: {}: {w}", row.path.display());
                }
            }
            Ok(EXIT_OK)
        }
        Command::Select { run, id } => {
            let shots = subjcheck::cmd_select(&run.load()?, &id)?;
            for shot in shots.shots() {
                println!("{}\t{}\t{}", shot.sentence.id, shot.label, shot.sentence.text);
            }
            Ok(EXIT_OK)
        }
        Command::Embed(flags) => {
            let summary = subjcheck::cmd_embed(&flags.load()?)?;
            println!(
                "{} sentence(s) embedded with {} (dim {})",
                summary.sentences,
                summary.provenance,
                summary.dim.map_or("-".to_string(), |d| d.to_string())
            );
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("SUBJCHECK_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
