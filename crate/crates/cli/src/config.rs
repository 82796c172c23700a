use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subjcheck_core::corpus::ColumnMapping;
use subjcheck_core::provider::ProviderConfig;
use subjcheck_core::strategies::{ClassifierSpec, SinglePromptSpec};
use subjcheck_core::{Error, Result, SelectionStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoint.
    Openai,
    /// Replies from a JSON-lines script keyed by request digest.
    Scripted,
    /// Offline lexicon heuristic.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct ProviderEntry {
    pub kind: ProviderKind,
    /// Script file for `scripted` providers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Reply for digests missing from the script.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<String>,
    /// Maximum concurrent requests to this provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(flatten)]
    pub config: ProviderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Openai,
    /// Deterministic feature-hashing vectors, for offline runs.
    Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub batch: usize,
    /// Vector size for `hash` embeddings.
    pub dim: usize,
    #[serde(flatten)]
    pub config: ProviderConfig,
}

// serde cannot combine `flatten` with `deny_unknown_fields`, so the entry
// keys are split off by hand and the rest must be a valid ProviderConfig.
fn take<T: serde::de::DeserializeOwned>(table: &mut toml::Table, key: &str) -> std::result::Result<Option<T>, String> {
    table
        .remove(key)
        .map(|v| v.try_into().map_err(|e: toml::de::Error| format!("{key}: {e}")))
        .transpose()
}

fn rest(table: toml::Table) -> std::result::Result<ProviderConfig, String> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.to_string())
}

impl TryFrom<toml::Table> for ProviderEntry {
    type Error = String;

    fn try_from(mut t: toml::Table) -> std::result::Result<Self, String> {
        Ok(ProviderEntry {
            kind: take(&mut t, "kind")?.ok_or("missing field `kind`")?,
            script: take(&mut t, "script")?,
            default_reply: take(&mut t, "default_reply")?,
            max_in_flight: take(&mut t, "max_in_flight")?,
            config: rest(t)?,
        })
    }
}

impl TryFrom<toml::Table> for EmbeddingConfig {
    type Error = String;

    fn try_from(mut t: toml::Table) -> std::result::Result<Self, String> {
        Ok(EmbeddingConfig {
            kind: take(&mut t, "kind")?.ok_or("missing field `kind`")?,
            batch: take(&mut t, "batch")?.unwrap_or_else(default_batch),
            dim: take(&mut t, "dim")?.unwrap_or_else(default_hash_dim),
            config: rest(t)?,
        })
    }
}

fn default_batch() -> usize {
    64
}

fn default_hash_dim() -> usize {
    64
}

fn default_split() -> String {
    "dev".into()
}

fn default_pool_split() -> String {
    "train".into()
}

fn default_language() -> String {
    "en".into()
}

fn default_parallelism() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    "runs".into()
}

fn default_cache_dir() -> PathBuf {
    ".subjcheck-cache".into()
}

/// A complete run description. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Target split, e.g. `dev` or `dev-test`.
    #[serde(default = "default_split")]
    pub split: String,
    /// Target language.
    #[serde(default = "default_language")]
    pub language: String,
    /// Split exemplars are drawn from.
    #[serde(default = "default_pool_split")]
    pub pool_split: String,
    /// Exemplar language; defaults to the target language.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_language: Option<String>,
    /// Overrides `k` on every single-prompt classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Overrides the selection strategy on every single-prompt classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyName>,
    /// Seed for random selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Fail instead of calling a provider on a cache miss.
    #[serde(default)]
    pub offline: bool,
    /// Directory with a `templates.json` of extra (translated) templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub columns: ColumnMapping,
    /// language -> split -> TSV path
    #[serde(default)]
    pub datasets: BTreeMap<String, BTreeMap<String, PathBuf>>,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingConfig>,
    pub classifier: ClassifierSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    Similar,
    Dissimilar,
}

/// Command-line overrides, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub split: Option<String>,
    pub language: Option<String>,
    pub strategy: Option<StrategyName>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.cache_dir);
        if let Some(p) = &mut self.prompts_dir {
            fix(p);
        }
        for splits in self.datasets.values_mut() {
            splits.values_mut().for_each(fix);
        }
        for entry in self.providers.values_mut() {
            if let Some(p) = &mut entry.script {
                fix(p);
            }
        }
        fix_external(&mut self.classifier, &fix);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.split {
            self.split = s.clone();
        }
        if let Some(l) = &o.language {
            self.language = l.clone();
        }
        if let Some(s) = o.strategy {
            self.strategy = Some(s);
        }
        if let Some(k) = o.k {
            self.k = Some(k);
        }
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(c) = &o.cache_dir {
            self.cache_dir = c.clone();
        }
        self.offline |= o.offline;
    }

    /// The classifier with top-level `k`, `strategy` and `seed` pushed into
    /// every single-prompt node.
    pub fn resolved_classifier(&self) -> ClassifierSpec {
        let mut spec = self.classifier.clone();
        spec.for_each_single_mut(&mut |s: &mut SinglePromptSpec| {
            if let Some(k) = self.k {
                s.k = k;
            }
            let seed = match (self.seed, s.selection) {
                (Some(seed), _) => seed,
                (None, SelectionStrategy::Random { seed }) => seed,
                (None, _) => 42,
            };
            s.selection = match self.strategy {
                Some(StrategyName::Random) => SelectionStrategy::Random { seed },
                Some(StrategyName::Similar) => SelectionStrategy::Similar,
                Some(StrategyName::Dissimilar) => SelectionStrategy::Dissimilar,
                None => match s.selection {
                    SelectionStrategy::Random { .. } => SelectionStrategy::Random { seed },
                    other => other,
                },
            };
        });
        spec
    }

    pub fn pool_language(&self) -> &str {
        self.pool_language.as_deref().unwrap_or(&self.language)
    }

    pub fn dataset_path(&self, language: &str, split: &str) -> Result<&Path> {
        self.datasets
            .get(language)
            .and_then(|s| s.get(split))
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("no dataset configured for {language}/{split}")))
    }

    /// Everything checkable without touching files or the network.
    pub fn validate(&self) -> Result<()> {
        let spec = self.resolved_classifier();
        spec.validate()?;
        for name in spec.providers() {
            let entry = self
                .providers
                .get(&name)
                .ok_or_else(|| Error::Config(format!("classifier uses undefined provider {name:?}")))?;
            entry.config.validate()?;
            if entry.kind == ProviderKind::Scripted && entry.script.is_none() && entry.default_reply.is_none() {
                return Err(Error::Config(format!("scripted provider {name:?} needs a script or default_reply")));
            }
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        self.dataset_path(&self.language, &self.split)?;
        if spec.needs_pool() {
            self.dataset_path(self.pool_language(), &self.pool_split)?;
        }
        if spec.needs_embeddings() && self.embedding.is_none() {
            return Err(Error::Config("similarity selection needs an [embedding] section".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn fix_external(spec: &mut ClassifierSpec, fix: &impl Fn(&mut PathBuf)) {
    match spec {
        ClassifierSpec::ExternalPredictions { path } => fix(path),
        ClassifierSpec::Ensemble(e) => e.members.iter_mut().for_each(|m| fix_external(&mut m.spec, fix)),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
split = "dev"
seed = 7

[datasets.en]
train = "data/train_en.tsv"
dev = "data/dev_en.tsv"

[providers.mock]
kind = "heuristic"
model = "mock"

[classifier]
type = "single_prompt"
provider = "mock"
"#;

    #[test]
    fn defaults_fill_single_prompt() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        c.validate().unwrap();
        match c.resolved_classifier() {
            ClassifierSpec::SinglePrompt(s) => {
                assert_eq!(s.k, 6);
                assert_eq!(s.template, "extended");
                assert_eq!(s.selection, SelectionStrategy::Random { seed: 7 });
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_reach_every_member() {
        let text = SAMPLE.replace(
            "[classifier]\ntype = \"single_prompt\"\nprovider = \"mock\"\n",
            r#"[classifier]
type = "ensemble"
tie_break = "OBJ"
[[classifier.members]]
id = "a"
spec = { type = "single_prompt", provider = "mock", k = 2 }
[[classifier.members]]
id = "b"
spec = { type = "debate", mode = "subj_vs_obj", advocate_provider = "mock", judge_provider = "mock" }
"#,
        );
        let mut c = RunConfig::from_toml(&text).unwrap();
        c.apply(&Overrides { k: Some(4), strategy: Some(StrategyName::Similar), ..Overrides::default() });
        let ClassifierSpec::Ensemble(e) = c.resolved_classifier() else { panic!() };
        let ClassifierSpec::SinglePrompt(s) = &e.members[0].spec else { panic!() };
        assert_eq!((s.k, s.selection), (4, SelectionStrategy::Similar));
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("embedding")));
    }

    #[test]
    fn rejects_undefined_provider_and_odd_k() {
        let c = RunConfig::from_toml(&SAMPLE.replace("provider = \"mock\"", "provider = \"gpt\"")).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("gpt")));
        let mut c = RunConfig::from_toml(SAMPLE).unwrap();
        c.k = Some(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml(&format!("sead = 3\n{SAMPLE}")).is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("model = \"mock\"", "modle = \"mock\"")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, SAMPLE).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.dataset_path("en", "dev").unwrap(), dir.path().join("data/dev_en.tsv"));
        assert_eq!(c.output_dir, dir.path().join("runs"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
