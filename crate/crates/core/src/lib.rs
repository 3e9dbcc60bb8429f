//! Adaptive multi-agent retrieval: a loop that retrieves, judges, and then
//! either keeps reading down the current ranking or rewrites the query.

pub mod agents;
pub mod domain;
pub mod eval;
pub mod llm_gateway;
pub mod orchestrator;
pub mod seeds;
pub mod sim;
