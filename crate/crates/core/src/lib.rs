//! Conversational query reformulation guided by retrieval rank.

pub mod data;
pub mod distill;
pub mod format;
pub mod grpo;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod reward;
pub mod scoring;
pub mod synthetic;
pub mod templates;
