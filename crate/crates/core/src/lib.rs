//! Governance-audit engine for model lineage graphs.
//!
//! The crate covers the full desk-scale pipeline: licence-evidence
//! classification, derivation-edge extraction from repository metadata,
//! lineage-graph construction with SCC condensation, four-state audit
//! assignment, governance-horizon metrics with bootstrap intervals,
//! platform-intervention simulation, merge-conflict causal estimators,
//! a package-registry comparator, and a seeded synthetic-ecosystem
//! generator used by the acceptance suite.
//!
//! Data-parallel inner loops (bootstrap resamples, Monte-Carlo enforcement
//! realizations, per-repository parsing) run on rayon when the default
//! `parallel` feature is enabled and fall back to sequential iteration
//! otherwise. Results are identical either way: every parallel task derives
//! its own seed from (seed, task index).

pub mod audit;
pub mod cards;
pub mod causal;
pub mod comparator;
pub mod error;
pub mod exec;
pub mod graph;
pub mod hash;
pub mod horizon;
pub mod intervention;
pub mod io;
pub mod licence;
pub mod rules;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
