//! Feature discovery with a two-stage LLM dialogue, a sandboxed feature
//! language and a gradient-boosted tree evaluator.

pub mod discovery;
pub mod feature_lang;
pub mod gbdt;
pub mod llm;
pub mod preference;
pub mod prompt;
pub mod subset;
pub mod task;
