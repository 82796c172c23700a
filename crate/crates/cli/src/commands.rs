use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use subjcheck_core::corpus::{reference_stats, reference_warnings, ColumnMapping};
use subjcheck_core::embedding::{embed_corpus_into, EmbeddingCache, EmbeddingProvider};
use subjcheck_core::evaluation::{gold_map, render_table};
use subjcheck_core::provider::{
    ChatBackend, CounterSnapshot, HashEmbeddingProvider, HeuristicMock, HttpChatBackend,
    HttpEmbeddingProvider, ResponseCache, ScriptedMock,
};
use subjcheck_core::strategies::{
    classify_corpus, parse_predictions, write_predictions, write_transcripts, Failure, RunContext,
};
use subjcheck_core::{
    build_audit, confusion, parse_dataset, score, select_shots, split_stats, AuditReport, Client,
    ClassifierSpec, EmbeddingStore, Error, EvalReport, LabeledSentence, Prediction, Result,
    SelectionStrategy, ShotSet, SplitStats, TemplateSet,
};

use crate::config::{EmbeddingKind, ProviderKind, RunConfig};

pub const RESPONSE_CACHE: &str = "responses.jsonl";
pub const EMBEDDING_CACHE: &str = "embeddings.jsonl";

pub fn load_dataset(path: &Path, mapping: &ColumnMapping, language: &str) -> Result<Vec<LabeledSentence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mapping = mapping.clone().with_language(language);
    parse_dataset(file, &mapping).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_split(config: &RunConfig, language: &str, split: &str) -> Result<Vec<LabeledSentence>> {
    load_dataset(config.dataset_path(language, split)?, &config.columns, language)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Creates `<output_dir>/<command>-<unix seconds>-<config digest>`, adding a
/// numeric suffix if that already exists.
pub fn create_run_dir(output_dir: &Path, command: &str, resolved_config: &str) -> Result<PathBuf> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let digest = hex_prefix(resolved_config.as_bytes());
    let stem = format!("{command}-{secs}-{digest}");
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    for n in 1u32.. {
        let name = if n == 1 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

fn hex_prefix(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(4).map(|b| format!("{b:02x}")).collect()
}

fn chat_backend(name: &str, config: &RunConfig) -> Result<Arc<dyn ChatBackend>> {
    let entry = &config.providers[name];
    Ok(match entry.kind {
        // Offline clients never reach the backend, so no credential is needed.
        ProviderKind::Openai if config.offline => Arc::new(ScriptedMock::new()),
        ProviderKind::Openai => Arc::new(HttpChatBackend::new(&entry.config)?),
        ProviderKind::Scripted => {
            let mut mock = match &entry.script {
                Some(path) => ScriptedMock::from_file(path)?,
                None => ScriptedMock::new(),
            };
            if let Some(reply) = &entry.default_reply {
                mock = mock.with_default(reply.clone());
            }
            Arc::new(mock)
        }
        ProviderKind::Heuristic => Arc::new(HeuristicMock::default()),
    })
}

fn clients(config: &RunConfig, names: &[String]) -> Result<std::collections::BTreeMap<String, Client>> {
    fs::create_dir_all(&config.cache_dir).map_err(|e| Error::io(&config.cache_dir, e))?;
    let cache = Arc::new(ResponseCache::open(config.cache_dir.join(RESPONSE_CACHE))?);
    names
        .iter()
        .map(|name| {
            let entry = &config.providers[name];
            let client = Client::new(name.clone(), entry.config.clone(), chat_backend(name, config)?)?
                .with_cache(cache.clone())
                .offline(config.offline)
                .with_max_in_flight(entry.max_in_flight.unwrap_or(config.parallelism));
            Ok((name.clone(), client))
        })
        .collect()
}

/// Stands in for a remote embedding endpoint in offline mode: same
/// provenance, so cached vectors are found, but every request fails.
struct OfflineEmbeddings(String);

impl EmbeddingProvider for OfflineEmbeddings {
    fn provenance(&self) -> String {
        self.0.clone()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Err(Error::Offline {
            digest: format!("{} uncached embedding(s)", texts.len()),
        })
    }
}

fn embedding_provider(config: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    let e = config
        .embedding
        .as_ref()
        .ok_or_else(|| Error::Config("no [embedding] section".into()))?;
    Ok(match e.kind {
        EmbeddingKind::Hash => Box::new(HashEmbeddingProvider::new(e.dim)),
        EmbeddingKind::Openai if config.offline => Box::new(OfflineEmbeddings(format!(
            "{}#{}",
            e.config.base_url.trim_end_matches('/'),
            e.config.model
        ))),
        EmbeddingKind::Openai => Box::new(HttpEmbeddingProvider::new(&e.config, e.batch)?),
    })
}

fn embed_all(config: &RunConfig, sentences: &[&[LabeledSentence]]) -> Result<EmbeddingStore> {
    let provider = embedding_provider(config)?;
    fs::create_dir_all(&config.cache_dir).map_err(|e| Error::io(&config.cache_dir, e))?;
    let cache = EmbeddingCache::open(config.cache_dir.join(EMBEDDING_CACHE))?;
    let mut store = EmbeddingStore::new(provider.provenance());
    for group in sentences {
        embed_corpus_into(&mut store, provider.as_ref(), Some(&cache), group)?;
    }
    Ok(store)
}

fn templates(config: &RunConfig) -> Result<TemplateSet> {
    let mut set = TemplateSet::builtin();
    if let Some(dir) = &config.prompts_dir {
        set.load_dir(dir)?;
    }
    Ok(set)
}

/// Loads data, embeddings, templates and providers for `spec`.
fn prepare(config: &RunConfig, spec: &ClassifierSpec) -> Result<(Vec<LabeledSentence>, RunContext)> {
    config.validate()?;
    let targets = load_split(config, &config.language, &config.split)?;
    let pool = if spec.needs_pool() {
        load_split(config, config.pool_language(), &config.pool_split)?
    } else {
        Vec::new()
    };
    let mut ctx = RunContext {
        providers: clients(config, &spec.providers())?,
        templates: templates(config)?,
        pool,
        store: None,
        external: HashMap::new(),
    };
    ctx.check_templates(spec, &targets)?;
    ctx.load_external_for(spec, &targets)?;
    if spec.needs_embeddings() {
        ctx.store = Some(embed_all(config, &[&ctx.pool, &targets])?);
    }
    ctx.check(spec, &targets)?;
    Ok((targets, ctx))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunCounters {
    #[serde(flatten)]
    pub calls: CounterSnapshot,
    pub sentences: usize,
    pub predicted: usize,
    pub failed: usize,
    pub fallbacks: usize,
}

#[derive(Debug)]
pub struct ClassifyOutcome {
    pub run_dir: PathBuf,
    pub targets: Vec<LabeledSentence>,
    pub predictions: Vec<Prediction>,
    pub failures: Vec<Failure>,
    pub counters: RunCounters,
    /// Present when every target carries a gold label.
    pub report: Option<EvalReport>,
}

impl ClassifyOutcome {
    pub fn predictions_path(&self) -> PathBuf {
        self.run_dir.join("predictions.tsv")
    }
}

/// Runs the configured classifier over the target split and writes
/// `config.toml`, `predictions.tsv`, `transcripts.jsonl`, `failures.jsonl`
/// and `counters.json` (plus `report.json` for labeled splits) into a fresh
/// run directory. Configuration problems are reported before any provider
/// is contacted.
pub fn cmd_classify(config: &RunConfig, run_dir: Option<&Path>) -> Result<ClassifyOutcome> {
    run_classifier(config, run_dir, "classify")
}

fn run_classifier(config: &RunConfig, run_dir: Option<&Path>, command: &str) -> Result<ClassifyOutcome> {
    let spec = config.resolved_classifier();
    let (targets, ctx) = prepare(config, &spec)?;
    let resolved = config.to_toml()?;
    let run_dir = match run_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            d.to_path_buf()
        }
        None => create_run_dir(&config.output_dir, command, &resolved)?,
    };
    write_file(&run_dir.join("config.toml"), resolved.as_bytes())?;

    tracing::info!(sentences = targets.len(), dir = %run_dir.display(), "classifying");
    let outcome = classify_corpus(&spec, &targets, &ctx, config.parallelism)?;

    let mut buf = Vec::new();
    write_predictions(&outcome.predictions, &mut buf)?;
    write_file(&run_dir.join("predictions.tsv"), &buf)?;
    buf.clear();
    write_transcripts(&outcome.predictions, &mut buf)?;
    write_file(&run_dir.join("transcripts.jsonl"), &buf)?;
    buf.clear();
    for f in &outcome.failures {
        serde_json::to_writer(&mut buf, f)?;
        buf.push(b'\n');
    }
    write_file(&run_dir.join("failures.jsonl"), &buf)?;

    let fallbacks = outcome.predictions.iter().filter(|p| p.fallback_used).count();
    let counters = RunCounters {
        calls: ctx.counters(),
        sentences: targets.len(),
        predicted: outcome.predictions.len(),
        failed: outcome.failures.len(),
        fallbacks,
    };
    write_file(&run_dir.join("counters.json"), &serde_json::to_vec_pretty(&counters)?)?;

    let report = match (outcome.failures.is_empty(), gold_map(&targets)) {
        (true, Ok(gold)) if !targets.is_empty() => {
            let preds = outcome.predictions.iter().map(|p| (p.sentence_id.clone(), p.label)).collect();
            let report = score(&confusion(&preds, &gold)?)?.with_fallback(fallbacks as u64);
            write_file(&run_dir.join("report.json"), report.to_json()?.as_bytes())?;
            Some(report)
        }
        _ => None,
    };

    Ok(ClassifyOutcome {
        run_dir,
        targets,
        predictions: outcome.predictions,
        failures: outcome.failures,
        counters,
        report,
    })
}

/// Scores a predictions TSV against a gold TSV. Fallback counts come from
/// `transcripts.jsonl` next to the predictions, when present.
pub fn cmd_evaluate(predictions: &Path, gold: &Path, mapping: &ColumnMapping) -> Result<EvalReport> {
    let raw = fs::read_to_string(predictions).map_err(|e| Error::io(predictions, e))?;
    let preds = parse_predictions(&raw, None)?;
    let gold_sentences = load_dataset(gold, mapping, &mapping.language)?;
    let gold = gold_map(&gold_sentences)?;
    let report = score(&confusion(&preds, &gold)?)?;
    let transcripts = predictions.with_file_name("transcripts.jsonl");
    let fallbacks = if transcripts.is_file() { count_fallbacks(&transcripts)? } else { 0 };
    Ok(report.with_fallback(fallbacks))
}

fn count_fallbacks(path: &Path) -> Result<u64> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut n = 0;
    for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        n += u64::from(p.fallback_used);
    }
    Ok(n)
}

pub fn evaluation_table(name: &str, report: &EvalReport) -> String {
    render_table(&[(name, report)])
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub classify: ClassifyOutcome,
    pub report: AuditReport,
}

/// Classifies a labeled split and ranks the disagreements with gold.
/// Writes `audit.tsv` and `audit.json` next to the classification outputs.
pub fn cmd_audit(config: &RunConfig, run_dir: Option<&Path>) -> Result<AuditOutcome> {
    let classify = run_classifier(config, run_dir, "audit")?;
    let lines: HashMap<&str, usize> = classify
        .predictions
        .iter()
        .enumerate()
        .map(|(i, p)| (p.sentence_id.as_str(), i + 1))
        .collect();
    let report = build_audit(&classify.targets, &classify.predictions, |id| {
        format!("transcripts.jsonl:{}", lines[id])
    })?;
    write_file(&classify.run_dir.join("audit.tsv"), report.to_tsv().as_bytes())?;
    write_file(&classify.run_dir.join("audit.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(AuditOutcome { classify, report })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub language: String,
    pub split: String,
    pub path: PathBuf,
    pub stats: SplitStats,
    /// Published counts for this language and split, if known.
    pub reference: Option<SplitStats>,
    pub warnings: Vec<String>,
}

/// Guesses `(language, split)` from names like `dev_test_en.tsv` or
/// `train_ar.tsv`.
pub fn infer_language_split(path: &Path) -> (Option<String>, Option<String>) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let parts: Vec<&str> = stem.split(['_', '-', '.']).collect();
    let split = if stem.contains("dev_test") || stem.contains("dev-test") || stem.contains("devtest") {
        Some("dev-test".to_string())
    } else if parts.contains(&"train") {
        Some("train".to_string())
    } else if parts.contains(&"dev") {
        Some("dev".to_string())
    } else if parts.contains(&"test") {
        Some("test".to_string())
    } else {
        None
    };
    let language = parts
        .iter()
        .rev()
        .find(|p| p.len() == 2 && p.chars().all(|c| c.is_ascii_alphabetic()))
        .map(|p| p.to_string());
    (language, split)
}

/// Class counts for one file, compared with the published table.
pub fn cmd_stats(
    path: &Path,
    mapping: &ColumnMapping,
    language: Option<&str>,
    split: Option<&str>,
) -> Result<StatsRow> {
    let (guess_lang, guess_split) = infer_language_split(path);
    let language = language.map(str::to_string).or(guess_lang).unwrap_or_else(|| mapping.language.clone());
    let split = split.map(str::to_string).or(guess_split).unwrap_or_else(|| "unknown".into());
    let sentences = load_dataset(path, mapping, &language)?;
    let stats = split_stats(&sentences);
    Ok(StatsRow {
        reference: reference_stats(&language, &split),
        warnings: reference_warnings(&language, &split, &stats),
        language,
        split,
        path: path.to_path_buf(),
        stats,
    })
}

/// Stats for every dataset named in the config.
pub fn cmd_stats_config(config: &RunConfig) -> Result<Vec<StatsRow>> {
    let mut rows = Vec::new();
    for (language, splits) in &config.datasets {
        for (split, path) in splits {
            rows.push(cmd_stats(path, &config.columns, Some(language), Some(split))?);
        }
    }
    Ok(rows)
}

pub fn stats_table(rows: &[StatsRow]) -> String {
    let fmt = |s: &Option<SplitStats>| match s {
        Some(s) => format!("{}/{}/{}", s.total, s.obj, s.subj),
        None => "-".into(),
    };
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.language.clone(),
                r.split.clone(),
                r.stats.total.to_string(),
                r.stats.obj.to_string(),
                r.stats.subj.to_string(),
                fmt(&r.reference),
            ]
        })
        .collect();
    let header = ["lang", "split", "total", "OBJ", "SUBJ", "published"];
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let rows_iter = std::iter::once(header.map(String::from)).chain(cells);
    for row in rows_iter {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// The exemplars the configured single-prompt classifier would use for one
/// target sentence.
pub fn cmd_select(config: &RunConfig, sentence_id: &str) -> Result<ShotSet> {
    let spec = match config.resolved_classifier() {
        ClassifierSpec::SinglePrompt(s) => s,
        ClassifierSpec::Ensemble(e) => e
            .members
            .into_iter()
            .find_map(|m| match m.spec {
                ClassifierSpec::SinglePrompt(s) => Some(s),
                _ => None,
            })
            .ok_or_else(|| Error::Config("no single-prompt classifier to select for".into()))?,
        _ => return Err(Error::Config("no single-prompt classifier to select for".into())),
    };
    let targets = load_split(config, &config.language, &config.split)?;
    let target = targets
        .iter()
        .find(|t| t.id == sentence_id)
        .ok_or_else(|| Error::Validation(format!("sentence {sentence_id:?} not in {}/{}", config.language, config.split)))?;
    let pool = load_split(config, config.pool_language(), &config.pool_split)?;
    let store = if spec.selection.needs_embeddings() {
        Some(embed_all(config, &[&pool, std::slice::from_ref(target)])?)
    } else {
        None
    };
    let strategy = match spec.selection {
        SelectionStrategy::Random { seed } => SelectionStrategy::Random {
            seed: subjcheck_core::strategies::target_seed(seed, &target.id),
        },
        other => other,
    };
    select_shots(&strategy, &pool, store.as_ref(), target, spec.k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedSummary {
    pub provenance: String,
    pub sentences: usize,
    pub dim: Option<usize>,
}

/// Embeds every configured dataset into the embedding cache.
pub fn cmd_embed(config: &RunConfig) -> Result<EmbedSummary> {
    let mut all = Vec::new();
    let mut seen = BTreeSet::new();
    for (language, splits) in &config.datasets {
        for path in splits.values() {
            for s in load_dataset(path, &config.columns, language)? {
                if seen.insert(s.id.clone()) {
                    all.push(s);
                }
            }
        }
    }
    let store = embed_all(config, &[&all])?;
    Ok(EmbedSummary {
        provenance: store.provenance().to_string(),
        sentences: store.len(),
        dim: store.dim(),
    })
}
