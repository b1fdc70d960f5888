//! Prosecutorial case-triage engine.
//!
//! Ingests a case register plus procedural event log, derives as-of-date
//! features, trains short-horizon resolution classifiers under rolling
//! temporal validation, screens the low-scoring tail for potential statutory
//! prescription and assigns randomized weekly cohorts.

pub mod baseline;
pub mod case_store;
pub mod date;
pub mod error;
pub mod features;
pub mod harness;
pub mod labels;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod prescription;
pub mod rct;
pub mod rng;
pub mod synth;

pub use case_store::{CaseRecord, CaseStore, EventType, FileFormat, Milestone, ProceduralEvent, Unit};
pub use date::Day;
pub use error::{Result, TriageError};
