//! Few-shot, debate and ensemble subjectivity classification of news
//! sentences through OpenAI-compatible chat endpoints.
//!
//! The pipeline: [`corpus`] loads labeled TSV splits, [`embedding`] and
//! [`selection`] pick in-context exemplars, [`prompting`] renders chats,
//! [`provider`] sends them (cached, retried, or mocked), [`strategies`] turns
//! replies into predictions and [`evaluation`] scores them.

pub mod audit;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
mod jsonl;
pub mod prompting;
pub mod provider;
pub mod selection;
pub mod strategies;

pub use audit::{build_audit, AuditEntry, AuditReport};
pub use corpus::{parse_dataset, split_stats, ColumnMapping, Label, LabeledSentence, SplitStats};
pub use embedding::{cosine_similarity, rank_by_similarity, EmbeddingStore, EmbeddingVector, SimilarityOrder};
pub use error::{Error, Result};
pub use evaluation::{confusion, score, ConfusionMatrix, EvalReport};
pub use prompting::{DebateRole, LabelFraming, PromptTemplate, RenderedChat, TemplateSet};
pub use provider::{cache_key, CacheKey, ChatRequest, ChatResponse, Client, ProviderConfig};
pub use selection::{select_shots, SelectionStrategy, ShotSet};
pub use strategies::{ClassifierSpec, DebateMode, Prediction};
