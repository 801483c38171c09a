//! Scripted learner scenarios and report rendering for the experimentation
//! service.

pub mod harness;
pub mod report;
