//! Text-side abstraction: judge prompts, proxy metrics, chunked classifier
//! aggregation, topic deduplication and the LLM transport.

pub mod chunk;
pub mod collect;
pub mod dedup;
pub mod fog;
pub mod llm;
pub mod prompts;

pub use chunk::{chunk_and_aggregate, chunk_text, Aggregate, ChunkClassifier, ChunkLabel, NullClassifier};
pub use collect::{collect_abstractions, CollectConfig, Providers};
pub use dedup::{dedup_indices, dedup_topics, TextSimilarity, TrigramCosine};
pub use fog::gunning_fog;
pub use llm::{ChatBackend, ExplanationCache, TextProviderConfig, API_KEY_VAR};
#[cfg(feature = "http")]
pub use llm::{llm_generate, ChatClient, HttpClassifier};
pub use prompts::{parse_judge_response, render_judge_prompt, render_topic_prompt, JudgePrompt};
