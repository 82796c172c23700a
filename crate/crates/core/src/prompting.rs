//! Prompt templates, few-shot chat rendering, debate prompts, and reply parsing.
//!
//! The English classification and debate prompts ship in `prompts/en/` and
//! are compiled in. Translated classification templates are loaded from a
//! directory holding a `templates.json` manifest (see [`TemplateSet::load_dir`]).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledSentence};
use crate::error::{Error, Result};
use crate::selection::ShotSet;

pub const SIMPLE_EN: &str = include_str!("../prompts/en/simple.txt");
pub const EXTENDED_EN: &str = include_str!("../prompts/en/extended.txt");
pub const EXPLAIN_SUBJECTIVE: &str = include_str!("../prompts/en/explain_subjective.txt");
pub const EXPLAIN_OBJECTIVE: &str = include_str!("../prompts/en/explain_objective.txt");
pub const EXPLAIN_NOT_SUBJECTIVE: &str = include_str!("../prompts/en/explain_not_subjective.txt");
pub const EXPLAIN_NOT_OBJECTIVE: &str = include_str!("../prompts/en/explain_not_objective.txt");
pub const JUDGE: &str = include_str!("../prompts/en/judge.txt");

/// Reply tokens accepted for each label under [`LabelFraming::ExplicitObjSubj`].
pub const OBJECTIVE_SYNONYMS: &[&str] = &["obj", "objective"];
pub const SUBJECTIVE_SYNONYMS: &[&str] = &["subj", "subjective"];
/// Under [`LabelFraming::YesNoBinary`] the question is "Is the sentence
/// subjective?", so "yes" means subjective.
pub const YES_SYNONYMS: &[&str] = &["yes"];
pub const NO_SYNONYMS: &[&str] = &["no"];

const YES_NO_INSTRUCTION: &str = "Is the sentence subjective? Answer only with Yes or No.";

/// The surface form of the answer space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFraming {
    ExplicitObjSubj,
    YesNoBinary,
    /// Neutral "Category N" tokens; the numbers are configurable.
    CategoryLabels {
        #[serde(default = "default_obj_category")]
        objective: u32,
        #[serde(default = "default_subj_category")]
        subjective: u32,
    },
}

fn default_obj_category() -> u32 {
    1
}

fn default_subj_category() -> u32 {
    2
}

impl LabelFraming {
    pub const CATEGORY_DEFAULT: LabelFraming = LabelFraming::CategoryLabels {
        objective: 1,
        subjective: 2,
    };

    fn validate(&self) -> Result<()> {
        match self {
            LabelFraming::CategoryLabels {
                objective,
                subjective,
            } if objective == subjective => Err(Error::Config(format!(
                "category framing needs two distinct numbers, got {objective} twice"
            ))),
            _ => Ok(()),
        }
    }

    /// The exemplar answer token for `label`.
    pub fn answer_token(&self, template: &PromptTemplate, label: Label) -> String {
        match (self, label) {
            (LabelFraming::ExplicitObjSubj, Label::Objective) => template.objective_token.clone(),
            (LabelFraming::ExplicitObjSubj, Label::Subjective) => template.subjective_token.clone(),
            (LabelFraming::YesNoBinary, Label::Objective) => "No".into(),
            (LabelFraming::YesNoBinary, Label::Subjective) => "Yes".into(),
            (LabelFraming::CategoryLabels { objective, .. }, Label::Objective) => {
                format!("Category {objective}")
            }
            (LabelFraming::CategoryLabels { subjective, .. }, Label::Subjective) => {
                format!("Category {subjective}")
            }
        }
    }

    fn instruction(&self, template: &PromptTemplate) -> String {
        match self {
            LabelFraming::ExplicitObjSubj => template.answer_instruction.clone(),
            LabelFraming::YesNoBinary => YES_NO_INSTRUCTION.into(),
            LabelFraming::CategoryLabels {
                objective,
                subjective,
            } => format!(
                "Answer only with Category {objective} if the sentence is objective or Category {subjective} if the sentence is subjective."
            ),
        }
    }

    fn choices(&self, template: &PromptTemplate) -> String {
        match self {
            LabelFraming::YesNoBinary => "Yes or No".into(),
            _ => format!(
                "{} or {}",
                self.answer_token(template, Label::Objective),
                self.answer_token(template, Label::Subjective)
            ),
        }
    }
}

impl fmt::Display for LabelFraming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelFraming::ExplicitObjSubj => f.write_str("explicit"),
            LabelFraming::YesNoBinary => f.write_str("yes-no"),
            LabelFraming::CategoryLabels {
                objective,
                subjective,
            } => write!(f, "category:{objective}:{subjective}"),
        }
    }
}

impl FromStr for LabelFraming {
    type Err = Error;

    /// Accepts `explicit`, `yes-no`, `category`, or `category:<obj>:<subj>`.
    fn from_str(s: &str) -> Result<Self> {
        let framing = match s {
            "explicit" => LabelFraming::ExplicitObjSubj,
            "yes-no" | "yes_no" => LabelFraming::YesNoBinary,
            "category" => LabelFraming::CATEGORY_DEFAULT,
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["category", o, s] => LabelFraming::CategoryLabels {
                        objective: o.parse().map_err(|_| Error::Config(format!("bad framing {other:?}")))?,
                        subjective: s.parse().map_err(|_| Error::Config(format!("bad framing {other:?}")))?,
                    },
                    _ => return Err(Error::Config(format!("unknown framing {other:?}"))),
                }
            }
        };
        framing.validate()?;
        Ok(framing)
    }
}

/// A classification system prompt.
///
/// `answer_instruction` is the trailing sentence of `system_text` that
/// tells the model how to answer; non-explicit framings replace it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub language: String,
    pub system_text: String,
    pub answer_instruction: String,
    pub objective_token: String,
    pub subjective_token: String,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        language: impl Into<String>,
        system_text: impl Into<String>,
        answer_instruction: impl Into<String>,
        tokens: (&str, &str),
    ) -> Result<Self> {
        let t = PromptTemplate {
            name: name.into(),
            language: language.into(),
            system_text: system_text.into(),
            answer_instruction: answer_instruction.into(),
            objective_token: tokens.0.into(),
            subjective_token: tokens.1.into(),
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.system_text.trim().is_empty() {
            return Err(Error::Config(format!("template {} has empty text", self.name)));
        }
        if self.answer_instruction.is_empty() || !self.system_text.ends_with(&self.answer_instruction) {
            return Err(Error::Config(format!(
                "template {}: answer instruction must be the final text of the prompt",
                self.name
            )));
        }
        if self.objective_token.trim().is_empty()
            || self.subjective_token.trim().is_empty()
            || normalize(&self.objective_token) == normalize(&self.subjective_token)
        {
            return Err(Error::Config(format!(
                "template {}: answer tokens must be distinct and non-empty",
                self.name
            )));
        }
        Ok(())
    }

    pub fn simple_en() -> Self {
        PromptTemplate::new("simple", "en", SIMPLE_EN, "Answer only with OBJ or SUBJ.", ("OBJ", "SUBJ"))
            .expect("bundled template")
    }

    pub fn extended_en() -> Self {
        PromptTemplate::new(
            "extended",
            "en",
            EXTENDED_EN,
            "Answer only with the words objective or subjective based on these criteria.",
            ("objective", "subjective"),
        )
        .expect("bundled template")
    }

    /// The system prompt under `framing`. Explicit framing returns the
    /// template text unchanged.
    pub fn system_for(&self, framing: &LabelFraming) -> String {
        match framing {
            LabelFraming::ExplicitObjSubj => self.system_text.clone(),
            other => {
                let stem = &self.system_text[..self.system_text.len() - self.answer_instruction.len()];
                format!("{stem}{}", other.instruction(self))
            }
        }
    }

    /// Parses a reply, trying this template's own answer tokens before the
    /// framing's standard synonyms.
    pub fn parse_reply(&self, reply: &str, framing: &LabelFraming) -> Result<Label> {
        if *framing == LabelFraming::ExplicitObjSubj {
            let norm = normalize(reply);
            for (token, label) in [
                (&self.objective_token, Label::Objective),
                (&self.subjective_token, Label::Subjective),
            ] {
                let token = normalize(token);
                if norm == token || norm.starts_with(&format!("{token} ")) {
                    return Ok(label);
                }
            }
        }
        parse_label(reply, framing)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    name: String,
    language: String,
    file: String,
    answer_instruction: String,
    objective_token: String,
    subjective_token: String,
}

/// Classification templates by (name, language).
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<(String, String), PromptTemplate>,
}

impl TemplateSet {
    /// The bundled English `simple` and `extended` templates.
    pub fn builtin() -> Self {
        let mut set = TemplateSet {
            templates: BTreeMap::new(),
        };
        set.insert(PromptTemplate::simple_en());
        set.insert(PromptTemplate::extended_en());
        set
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates
            .insert((template.name.clone(), template.language.clone()), template);
    }

    /// Adds templates listed in `<dir>/templates.json`: an array of
    /// `{name, language, file, answer_instruction, objective_token,
    /// subjective_token}` with `file` relative to `dir`. File bytes are used
    /// verbatim.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("templates.json");
        let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&raw)?;
        for e in entries {
            let path = dir.join(&e.file);
            let text = fs::read_to_string(&path).map_err(|err| Error::io(&path, err))?;
            self.insert(PromptTemplate::new(
                e.name,
                e.language,
                text,
                e.answer_instruction,
                (&e.objective_token, &e.subjective_token),
            )?);
        }
        Ok(())
    }

    pub fn get(&self, name: &str, language: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(&(name.to_string(), language.to_string()))
            .ok_or_else(|| Error::Config(format!("no template {name:?} for language {language:?}")))
    }

    pub fn contains(&self, name: &str, language: &str) -> bool {
        self.templates
            .contains_key(&(name.to_string(), language.to_string()))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenderedChat {
    pub messages: Vec<ChatMessage>,
}

impl RenderedChat {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn system(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// System prompt, then one user/assistant pair per shot, then the target.
pub fn render_classification(
    template: &PromptTemplate,
    framing: &LabelFraming,
    shots: &ShotSet,
    target: &LabeledSentence,
) -> RenderedChat {
    let mut messages = Vec::with_capacity(2 + 2 * shots.k());
    messages.push(ChatMessage::new(Role::System, template.system_for(framing)));
    for shot in shots.shots() {
        messages.push(ChatMessage::new(Role::User, shot.sentence.text.clone()));
        messages.push(ChatMessage::new(
            Role::Assistant,
            framing.answer_token(template, shot.label),
        ));
    }
    messages.push(ChatMessage::new(Role::User, target.text.clone()));
    RenderedChat { messages }
}

/// Extends a chat whose reply could not be parsed with one clarification turn.
/// The new user message repeats the target sentence.
pub fn render_reprompt(
    chat: &RenderedChat,
    bad_reply: &str,
    choices: &str,
    target: &LabeledSentence,
) -> RenderedChat {
    let mut out = chat.clone();
    out.messages.push(ChatMessage::new(Role::Assistant, bad_reply));
    out.messages.push(ChatMessage::new(
        Role::User,
        format!(
            "Your previous answer could not be understood. Answer only with {choices}.\n\nSentence: {}",
            target.text
        ),
    ));
    out
}

pub fn classification_choices(template: &PromptTemplate, framing: &LabelFraming) -> String {
    framing.choices(template)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebateRole {
    ExplainSubjective,
    ExplainObjective,
    ExplainNotSubjective,
    ExplainNotObjective,
    Judge,
}

impl DebateRole {
    /// Order in which advocate opinions are presented to the judge.
    pub const ADVOCATES: [DebateRole; 4] = [
        DebateRole::ExplainSubjective,
        DebateRole::ExplainObjective,
        DebateRole::ExplainNotSubjective,
        DebateRole::ExplainNotObjective,
    ];

    pub fn system_prompt(self) -> &'static str {
        match self {
            DebateRole::ExplainSubjective => EXPLAIN_SUBJECTIVE,
            DebateRole::ExplainObjective => EXPLAIN_OBJECTIVE,
            DebateRole::ExplainNotSubjective => EXPLAIN_NOT_SUBJECTIVE,
            DebateRole::ExplainNotObjective => EXPLAIN_NOT_OBJECTIVE,
            DebateRole::Judge => JUDGE,
        }
    }

    /// Header used for this role's opinion in the judge prompt.
    pub fn header(self) -> &'static str {
        match self {
            DebateRole::ExplainSubjective => "Subjective",
            DebateRole::ExplainObjective => "Objective",
            DebateRole::ExplainNotSubjective => "Not Subjective",
            DebateRole::ExplainNotObjective => "Not Objective",
            DebateRole::Judge => "Judge",
        }
    }

    fn advocate_rank(self) -> usize {
        DebateRole::ADVOCATES
            .iter()
            .position(|r| *r == self)
            .unwrap_or(usize::MAX)
    }
}

/// Renders a debate turn. Advocates see `Sentence: <text>`; the judge sees
/// the sentence followed by one `Opinion (<role>):` block per opinion,
/// blocks separated by blank lines, in [`DebateRole::ADVOCATES`] order.
pub fn render_debate(
    role: DebateRole,
    target: &LabeledSentence,
    opinions: Option<&[(DebateRole, String)]>,
) -> Result<RenderedChat> {
    let mut user = format!("Sentence: {}", target.text);
    match (role, opinions) {
        (DebateRole::Judge, None) => {
            return Err(Error::Contract("judge prompt requires opinions".into()))
        }
        (DebateRole::Judge, Some([])) => {
            return Err(Error::Contract("judge prompt requires at least one opinion".into()))
        }
        (DebateRole::Judge, Some(ops)) => {
            let mut ordered: Vec<&(DebateRole, String)> = ops.iter().collect();
            if let Some((r, _)) = ordered.iter().find(|(r, _)| *r == DebateRole::Judge) {
                return Err(Error::Contract(format!("{r:?} cannot give an opinion")));
            }
            ordered.sort_by_key(|(r, _)| r.advocate_rank());
            for (r, text) in ordered {
                user.push_str(&format!("\n\nOpinion ({}):\n{}", r.header(), text));
            }
        }
        (_, Some(_)) => {
            return Err(Error::Contract(format!("{role:?} takes no opinions")))
        }
        (_, None) => {}
    }
    Ok(RenderedChat {
        messages: vec![
            ChatMessage::new(Role::System, role.system_prompt()),
            ChatMessage::new(Role::User, user),
        ],
    })
}

fn normalize(reply: &str) -> String {
    reply
        .trim()
        .to_lowercase()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

fn tokens(normalized: &str) -> Vec<&str> {
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Maps a model reply to a label under `framing`.
///
/// The reply is trimmed, lowercased and stripped of surrounding
/// punctuation; the first token (first two for `Category N`) decides.
pub fn parse_label(reply: &str, framing: &LabelFraming) -> Result<Label> {
    let norm = normalize(reply);
    let toks = tokens(&norm);
    let unparseable = || Error::UnparseableReply {
        raw: reply.to_string(),
    };
    let first = *toks.first().ok_or_else(unparseable)?;
    let pick = |obj: &[&str], subj: &[&str]| {
        if obj.contains(&first) {
            Ok(Label::Objective)
        } else if subj.contains(&first) {
            Ok(Label::Subjective)
        } else {
            Err(unparseable())
        }
    };
    match framing {
        LabelFraming::ExplicitObjSubj => pick(OBJECTIVE_SYNONYMS, SUBJECTIVE_SYNONYMS),
        LabelFraming::YesNoBinary => pick(NO_SYNONYMS, YES_SYNONYMS),
        LabelFraming::CategoryLabels {
            objective,
            subjective,
        } => {
            let number = match toks.as_slice() {
                ["category" | "cat", n, ..] => n,
                [n, ..] => n,
                [] => return Err(unparseable()),
            };
            match number.parse::<u32>() {
                Ok(n) if n == *objective => Ok(Label::Objective),
                Ok(n) if n == *subjective => Ok(Label::Subjective),
                _ => Err(unparseable()),
            }
        }
    }
}
