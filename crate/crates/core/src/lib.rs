//! Core library for the PEAR parameter-tuning workflow.

pub mod agents;
pub mod demo;
pub mod eval;
pub mod executor;
pub mod kb;
pub mod llm;
pub mod orchestrator;
pub mod params;
pub mod rulebook;
pub mod session_log;
