//! Runtime monitoring and compensation-based recovery for orchestration
//! workflows.

pub mod deps;
pub mod engine;
pub mod fixtures;
pub mod lts;
pub mod monitor;
pub mod oracle;
pub mod planner;
pub mod report;
pub mod sat;
pub mod workflow;
