//! Strategy-guided query rewriting for dense retrieval: corpus loading,
//! exact-search evaluation, strategy prompts, reward shaping, rollout
//! generation and a seeded policy-training harness.

pub mod corpus;
pub mod generator;
pub mod http;
pub mod retrieval;
pub mod reward;
pub mod strategy;
pub mod policy;
pub mod harness;
