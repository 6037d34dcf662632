//! Tabular records to instruction prompts, a tiny decoder-only language model
//! fine-tuned with low-rank adapters, likelihood-based yes/no classification,
//! and the evaluation harness around them.

pub mod backends;
pub mod baselines;
pub mod cohort;
pub mod experiments;
pub mod lm;
pub mod metrics;
pub mod promptgen;
