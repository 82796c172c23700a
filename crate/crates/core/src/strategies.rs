//! Classification strategies: single prompt, debate, and majority-vote
//! ensembles over any mix of the two (plus externally supplied predictions).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Label, LabeledSentence};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::prompting::{
    classification_choices, parse_label, render_classification, render_debate, render_reprompt,
    DebateRole, LabelFraming, RenderedChat, TemplateSet,
};
use crate::provider::{cache_key, CacheKey, Client, CounterSnapshot};
use crate::selection::{select_shots, SelectionStrategy};

fn default_fallback() -> Label {
    Label::Objective
}

fn default_template() -> String {
    "extended".into()
}

fn default_framing() -> LabelFraming {
    LabelFraming::ExplicitObjSubj
}

fn default_selection() -> SelectionStrategy {
    SelectionStrategy::Random { seed: 42 }
}

fn default_k() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglePromptSpec {
    #[serde(default = "default_template")]
    pub template: String,
    /// Template language; `None` uses each target sentence's language.
    #[serde(default)]
    pub template_language: Option<String>,
    #[serde(default = "default_framing")]
    pub framing: LabelFraming,
    #[serde(default = "default_selection")]
    pub selection: SelectionStrategy,
    #[serde(default = "default_k")]
    pub k: usize,
    pub provider: String,
    /// Label used when the reply cannot be parsed even after a reprompt.
    #[serde(default = "default_fallback")]
    pub fallback: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebateMode {
    SubjVsObj,
    NotSubjVsNotObj,
    FullScale,
}

impl DebateMode {
    pub fn advocates(self) -> &'static [DebateRole] {
        match self {
            DebateMode::SubjVsObj => &[DebateRole::ExplainSubjective, DebateRole::ExplainObjective],
            DebateMode::NotSubjVsNotObj => {
                &[DebateRole::ExplainNotSubjective, DebateRole::ExplainNotObjective]
            }
            DebateMode::FullScale => &DebateRole::ADVOCATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateSpec {
    pub mode: DebateMode,
    pub advocate_provider: String,
    pub judge_provider: String,
    #[serde(default = "default_fallback")]
    pub fallback: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub id: String,
    pub spec: ClassifierSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<EnsembleMember>,
    /// Winner on an exact tie; always set, even for odd member counts.
    #[serde(default = "default_fallback")]
    pub tie_break: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassifierSpec {
    SinglePrompt(SinglePromptSpec),
    Debate(DebateSpec),
    Ensemble(EnsembleSpec),
    ExternalPredictions { path: PathBuf },
}

impl ClassifierSpec {
    /// Names of every provider the spec calls, deduplicated.
    pub fn providers(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_providers(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_providers(&self, out: &mut Vec<String>) {
        match self {
            ClassifierSpec::SinglePrompt(s) => out.push(s.provider.clone()),
            ClassifierSpec::Debate(d) => {
                out.push(d.advocate_provider.clone());
                out.push(d.judge_provider.clone());
            }
            ClassifierSpec::Ensemble(e) => e.members.iter().for_each(|m| m.spec.collect_providers(out)),
            ClassifierSpec::ExternalPredictions { .. } => {}
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        match self {
            ClassifierSpec::SinglePrompt(s) => s.selection.needs_embeddings() && s.k > 0,
            ClassifierSpec::Ensemble(e) => e.members.iter().any(|m| m.spec.needs_embeddings()),
            _ => false,
        }
    }

    /// Applies `f` to every single-prompt node, including ensemble members.
    pub fn for_each_single_mut(&mut self, f: &mut impl FnMut(&mut SinglePromptSpec)) {
        match self {
            ClassifierSpec::SinglePrompt(s) => f(s),
            ClassifierSpec::Ensemble(e) => e.members.iter_mut().for_each(|m| m.spec.for_each_single_mut(f)),
            _ => {}
        }
    }

    /// Whether any node draws exemplars from the pool.
    pub fn needs_pool(&self) -> bool {
        match self {
            ClassifierSpec::SinglePrompt(s) => s.k > 0,
            ClassifierSpec::Ensemble(e) => e.members.iter().any(|m| m.spec.needs_pool()),
            _ => false,
        }
    }

    pub fn external_paths(&self) -> Vec<PathBuf> {
        match self {
            ClassifierSpec::ExternalPredictions { path } => vec![path.clone()],
            ClassifierSpec::Ensemble(e) => e.members.iter().flat_map(|m| m.spec.external_paths()).collect(),
            _ => Vec::new(),
        }
    }

    /// Structural checks that need no I/O.
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierSpec::SinglePrompt(s) if s.k % 2 != 0 => {
                Err(Error::Config(format!("k={} must be even", s.k)))
            }
            ClassifierSpec::Ensemble(e) => {
                if e.members.is_empty() {
                    return Err(Error::Config("ensemble needs at least one member".into()));
                }
                let mut ids = HashSet::new();
                for m in &e.members {
                    if m.id.is_empty() || m.id.contains('/') {
                        return Err(Error::Config(format!("bad ensemble member id {:?}", m.id)));
                    }
                    if !ids.insert(&m.id) {
                        return Err(Error::Config(format!("duplicate ensemble member id {:?}", m.id)));
                    }
                    m.spec.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One provider round trip, recorded for the transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    /// Ensemble member path (`a/b` for nested ensembles), if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<DebateRole>,
    pub provider: String,
    pub digest: CacheKey,
    pub messages: RenderedChat,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub opinions: Vec<(DebateRole, String)>,
    pub judge_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<BTreeMap<String, Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<DebateTranscript>,
    pub fallback_used: bool,
    #[serde(default)]
    pub exchanges: Vec<Exchange>,
}

impl Prediction {
    /// Fraction of ensemble votes agreeing with the final label; 1.0 for
    /// non-ensemble predictions.
    pub fn agreement(&self) -> f64 {
        match &self.votes {
            Some(v) if !v.is_empty() => {
                v.values().filter(|l| **l == self.label).count() as f64 / v.len() as f64
            }
            _ => 1.0,
        }
    }
}

/// Everything a strategy needs besides its spec and target.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub providers: BTreeMap<String, Client>,
    pub templates: TemplateSet,
    /// Exemplar pool for few-shot selection.
    pub pool: Vec<LabeledSentence>,
    pub store: Option<EmbeddingStore>,
    pub external: HashMap<PathBuf, HashMap<String, Label>>,
}

impl RunContext {
    pub fn provider(&self, name: &str) -> Result<&Client> {
        self.providers
            .get(name)
            .ok_or_else(|| Error::Config(format!("provider {name:?} is not defined")))
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.providers
            .values()
            .map(Client::counters)
            .fold(CounterSnapshot::default(), |a, b| a + b)
    }

    /// Checks that every provider, template, store and external file the
    /// spec needs for `targets` is present.
    pub fn check(&self, spec: &ClassifierSpec, targets: &[LabeledSentence]) -> Result<()> {
        spec.validate()?;
        for p in spec.providers() {
            self.provider(&p)?;
        }
        self.check_templates(spec, targets)?;
        if spec.needs_embeddings() {
            let store = self
                .store
                .as_ref()
                .ok_or_else(|| Error::Config("similarity selection needs embeddings".into()))?;
            for s in self.pool.iter().chain(targets) {
                if !store.contains(&s.id) {
                    return Err(Error::Lookup(s.id.clone()));
                }
            }
        }
        for path in spec.external_paths() {
            if !self.external.contains_key(&path) {
                return Err(Error::Config(format!("external predictions {} not loaded", path.display())));
            }
        }
        Ok(())
    }

    pub fn check_templates(&self, spec: &ClassifierSpec, targets: &[LabeledSentence]) -> Result<()> {
        match spec {
            ClassifierSpec::SinglePrompt(s) => {
                let languages: HashSet<&str> = match &s.template_language {
                    Some(l) => [l.as_str()].into(),
                    None => targets.iter().map(|t| t.language.as_str()).collect(),
                };
                for lang in languages {
                    self.templates.get(&s.template, lang)?;
                }
                Ok(())
            }
            ClassifierSpec::Ensemble(e) => e
                .members
                .iter()
                .try_for_each(|m| self.check_templates(&m.spec, targets)),
            _ => Ok(()),
        }
    }

    /// Loads every external predictions file the spec names, validating ids
    /// against `targets`.
    pub fn load_external_for(&mut self, spec: &ClassifierSpec, targets: &[LabeledSentence]) -> Result<()> {
        let ids: HashSet<&str> = targets.iter().map(|t| t.id.as_str()).collect();
        for path in spec.external_paths() {
            if let std::collections::hash_map::Entry::Vacant(slot) = self.external.entry(path) {
                let map = load_external_predictions(slot.key(), Some(&ids))?;
                slot.insert(map);
            }
        }
        Ok(())
    }
}

/// Per-sentence seed for random selection, so each target gets its own
/// exemplars: the first 8 bytes (big-endian) of SHA-256(seed_be || id).
pub fn target_seed(seed: u64, sentence_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(sentence_id.as_bytes());
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

struct Asked {
    label: Label,
    fallback_used: bool,
    reply: String,
    exchanges: Vec<Exchange>,
}

/// Sends `chat`; on an unparseable reply sends one reprompt; if that also
/// fails to parse, returns `fallback`.
fn ask_with_reprompt(
    client: &Client,
    chat: RenderedChat,
    parse: impl Fn(&str) -> Result<Label>,
    choices: &str,
    target: &LabeledSentence,
    fallback: Label,
    role: Option<DebateRole>,
) -> Result<Asked> {
    let mut exchanges = Vec::with_capacity(2);
    let first = exchange(client, chat.clone(), role)?;
    let reply = first.reply.clone();
    exchanges.push(first);
    if let Ok(label) = parse(&reply) {
        return Ok(Asked { label, fallback_used: false, reply, exchanges });
    }
    let retry_chat = render_reprompt(&chat, &reply, choices, target);
    let second = exchange(client, retry_chat, role)?;
    let reply = second.reply.clone();
    exchanges.push(second);
    let (label, fallback_used) = match parse(&reply) {
        Ok(label) => (label, false),
        Err(_) => {
            tracing::warn!(sentence = %target.id, "unparseable reply after reprompt, using fallback");
            (fallback, true)
        }
    };
    Ok(Asked { label, fallback_used, reply, exchanges })
}

fn exchange(client: &Client, messages: RenderedChat, role: Option<DebateRole>) -> Result<Exchange> {
    let request = client.request(messages);
    let response = client.complete(&request)?;
    Ok(Exchange {
        member: None,
        role,
        provider: client.name().to_string(),
        digest: cache_key(&request),
        messages: request.messages,
        reply: response.content,
    })
}

/// Select shots, render, call the provider, parse (with one reprompt and
/// the fallback rule).
pub fn classify_single(spec: &SinglePromptSpec, target: &LabeledSentence, ctx: &RunContext) -> Result<Prediction> {
    let language = spec.template_language.as_deref().unwrap_or(&target.language);
    let template = ctx.templates.get(&spec.template, language)?;
    let strategy = match spec.selection {
        SelectionStrategy::Random { seed } => SelectionStrategy::Random {
            seed: target_seed(seed, &target.id),
        },
        other => other,
    };
    let shots = select_shots(&strategy, &ctx.pool, ctx.store.as_ref(), target, spec.k)?;
    let chat = render_classification(template, &spec.framing, &shots, target);
    let client = ctx.provider(&spec.provider)?;
    let asked = ask_with_reprompt(
        client,
        chat,
        |r| template.parse_reply(r, &spec.framing),
        &classification_choices(template, &spec.framing),
        target,
        spec.fallback,
        None,
    )?;
    Ok(Prediction {
        sentence_id: target.id.clone(),
        label: asked.label,
        votes: None,
        transcript: None,
        fallback_used: asked.fallback_used,
        exchanges: asked.exchanges,
    })
}

/// Advocates (concurrently), then the judge.
pub fn run_debate(spec: &DebateSpec, target: &LabeledSentence, ctx: &RunContext) -> Result<Prediction> {
    let advocate = ctx.provider(&spec.advocate_provider)?;
    let judge = ctx.provider(&spec.judge_provider)?;
    let results: Vec<(DebateRole, Result<Exchange>)> = spec
        .mode
        .advocates()
        .par_iter()
        .map(|&role| (role, render_debate(role, target, None).and_then(|chat| exchange(advocate, chat, Some(role)))))
        .collect();

    let mut opinions = Vec::with_capacity(results.len());
    let mut exchanges = Vec::with_capacity(results.len() + 2);
    let mut first_error = None;
    for (role, result) in results {
        match result {
            Ok(ex) => {
                opinions.push((role, ex.reply.clone()));
                exchanges.push(ex);
            }
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    if let Some(source) = first_error {
        return Err(Error::DebateAborted {
            sentence_id: target.id.clone(),
            completed: opinions,
            source: Box::new(source),
        });
    }

    let chat = render_debate(DebateRole::Judge, target, Some(&opinions))?;
    let asked = ask_with_reprompt(
        judge,
        chat,
        |r| parse_label(r, &LabelFraming::ExplicitObjSubj),
        "objective or subjective",
        target,
        spec.fallback,
        Some(DebateRole::Judge),
    )?;
    exchanges.extend(asked.exchanges);
    Ok(Prediction {
        sentence_id: target.id.clone(),
        label: asked.label,
        votes: None,
        transcript: Some(DebateTranscript {
            opinions,
            judge_reply: asked.reply,
        }),
        fallback_used: asked.fallback_used,
        exchanges,
    })
}

/// Strict majority wins; an exact tie goes to `tie_break`.
pub fn majority_vote(votes: &[(String, Label)], tie_break: Label) -> Result<Label> {
    if votes.is_empty() {
        return Err(Error::Contract("majority vote over zero votes".into()));
    }
    let mut seen = HashSet::new();
    if let Some((dup, _)) = votes.iter().find(|(m, _)| !seen.insert(m)) {
        return Err(Error::Contract(format!("member {dup:?} voted twice")));
    }
    let subj = votes.iter().filter(|(_, l)| *l == Label::Subjective).count();
    let obj = votes.len() - subj;
    Ok(match subj.cmp(&obj) {
        std::cmp::Ordering::Greater => Label::Subjective,
        std::cmp::Ordering::Less => Label::Objective,
        std::cmp::Ordering::Equal => tie_break,
    })
}

pub fn classify_ensemble(sentence_id: &str, votes: &[(String, Label)], tie_break: Label) -> Result<Prediction> {
    let label = majority_vote(votes, tie_break)?;
    Ok(Prediction {
        sentence_id: sentence_id.to_string(),
        label,
        votes: Some(votes.iter().cloned().collect()),
        transcript: None,
        fallback_used: false,
        exchanges: Vec::new(),
    })
}

fn run_ensemble(spec: &EnsembleSpec, target: &LabeledSentence, ctx: &RunContext) -> Result<Prediction> {
    let members: Vec<Prediction> = spec
        .members
        .par_iter()
        .map(|m| classify(&m.spec, target, ctx))
        .collect::<Result<_>>()?;
    let votes: Vec<(String, Label)> = spec
        .members
        .iter()
        .zip(&members)
        .map(|(m, p)| (m.id.clone(), p.label))
        .collect();
    let mut prediction = classify_ensemble(&target.id, &votes, spec.tie_break)?;
    for (m, p) in spec.members.iter().zip(members) {
        prediction.fallback_used |= p.fallback_used;
        prediction.exchanges.extend(p.exchanges.into_iter().map(|mut ex| {
            ex.member = Some(match ex.member {
                Some(inner) => format!("{}/{inner}", m.id),
                None => m.id.clone(),
            });
            ex
        }));
    }
    Ok(prediction)
}

pub fn classify(spec: &ClassifierSpec, target: &LabeledSentence, ctx: &RunContext) -> Result<Prediction> {
    match spec {
        ClassifierSpec::SinglePrompt(s) => classify_single(s, target, ctx),
        ClassifierSpec::Debate(d) => run_debate(d, target, ctx),
        ClassifierSpec::Ensemble(e) => run_ensemble(e, target, ctx),
        ClassifierSpec::ExternalPredictions { path } => {
            let map = ctx
                .external
                .get(path)
                .ok_or_else(|| Error::Config(format!("external predictions {} not loaded", path.display())))?;
            let label = *map.get(&target.id).ok_or_else(|| {
                Error::Validation(format!("{} has no prediction for {:?}", path.display(), target.id))
            })?;
            Ok(Prediction {
                sentence_id: target.id.clone(),
                label,
                votes: None,
                transcript: None,
                fallback_used: false,
                exchanges: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub sentence_id: String,
    pub error: String,
    /// Opinions finished before a debate aborted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub completed_opinions: Vec<(DebateRole, String)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// Successful predictions, in target order.
    pub predictions: Vec<Prediction>,
    pub failures: Vec<Failure>,
}

/// Classifies every target with at most `parallelism` sentences in flight.
/// Output order follows `targets` regardless of scheduling.
pub fn classify_corpus(
    spec: &ClassifierSpec,
    targets: &[LabeledSentence],
    ctx: &RunContext,
    parallelism: usize,
) -> Result<RunOutcome> {
    ctx.check(spec, targets)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Prediction>> =
        pool.install(|| targets.par_iter().map(|t| classify(spec, t, ctx)).collect());

    let mut outcome = RunOutcome::default();
    for (target, result) in targets.iter().zip(results) {
        match result {
            Ok(p) => outcome.predictions.push(p),
            Err(e) => {
                let completed_opinions = match &e {
                    Error::DebateAborted { completed, .. } => completed.clone(),
                    _ => Vec::new(),
                };
                outcome.failures.push(Failure {
                    sentence_id: target.id.clone(),
                    error: e.to_string(),
                    completed_opinions,
                });
            }
        }
    }
    Ok(outcome)
}

/// Predictions TSV: header `sentence_id<TAB>label`, one row per prediction.
pub fn write_predictions<W: Write>(predictions: &[Prediction], mut sink: W) -> Result<()> {
    let mut out = String::from("sentence_id\tlabel\n");
    for p in predictions {
        if p.sentence_id.contains(['\t', '\n', '\r']) {
            return Err(Error::Validation(format!("sentence id {:?} cannot be written", p.sentence_id)));
        }
        out.push_str(&p.sentence_id);
        out.push('\t');
        out.push_str(p.label.token());
        out.push('\n');
    }
    sink.write_all(out.as_bytes()).map_err(|e| Error::io("<predictions>", e))
}

/// One JSON object per prediction, in the given order.
pub fn write_transcripts<W: Write>(predictions: &[Prediction], mut sink: W) -> Result<()> {
    let mut out = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    sink.write_all(&out).map_err(|e| Error::io("<transcripts>", e))
}

/// Reads a predictions TSV (`sentence_id`, `label`). With `known_ids`,
/// every id must belong to that set.
pub fn load_external_predictions(
    path: impl AsRef<Path>,
    known_ids: Option<&HashSet<&str>>,
) -> Result<HashMap<String, Label>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&raw, known_ids).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_predictions(raw: &str, known_ids: Option<&HashSet<&str>>) -> Result<HashMap<String, Label>> {
    let mut lines = raw.lines().enumerate();
    let header = lines.next().map(|(_, h)| h).unwrap_or("");
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let id_idx = cols.iter().position(|c| *c == "sentence_id");
    let label_idx = cols.iter().position(|c| *c == "label");
    let (id_idx, label_idx) = match (id_idx, label_idx) {
        (Some(i), Some(l)) => (i, l),
        _ if header.trim().is_empty() => return Ok(HashMap::new()),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "predictions header must name sentence_id and label".into(),
            })
        }
    };
    let mut out = HashMap::new();
    for (i, line) in lines {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", cols.len(), fields.len()),
            });
        }
        let id = fields[id_idx].trim();
        let label: Label = fields[label_idx].trim().parse().map_err(|_| {
            Error::Validation(format!("line {line_no}: unknown label token {:?}", fields[label_idx].trim()))
        })?;
        if let Some(known) = known_ids {
            if !known.contains(id) {
                return Err(Error::Validation(format!("line {line_no}: unknown sentence id {id:?}")));
            }
        }
        if out.insert(id.to_string(), label).is_some() {
            return Err(Error::Validation(format!("line {line_no}: duplicate sentence id {id:?}")));
        }
    }
    Ok(out)
}
