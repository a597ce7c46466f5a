//! Simulation of closed-ended survey responses with LLMs.
//!
//! The crate is organized around five layers:
//!
//! * [`survey`] — the survey instrument (questions, response options, scale
//!   variants), respondent data, persona-prompt templating, and the
//!   stratified shuffle baseline.
//! * [`backend`] — the generation contract every method runs against, with
//!   an OpenAI-style HTTP implementation (guided-decoding extensions) and a
//!   scriptable deterministic mock for offline testing.
//! * [`token_map`] — mapping of returned token surface strings to response
//!   options and aggregation of token probabilities into option
//!   distributions.
//! * [`methods`] — the eight survey response generation methods, JSON schema
//!   builders for the restricted formats, and output parsing into a unified
//!   per-respondent prediction.
//! * [`metrics`] — individual-level, robustness, subpopulation-level,
//!   calibration, and global-alignment metrics, plus subpopulation
//!   construction and validity-based exclusion.
//!
//! [`harness`] ties the layers together: it expands a simulation grid from a
//! run config, executes it with bounded concurrency and resume, persists one
//! JSONL record per (cell, respondent), and renders metric reports.

pub mod backend;
pub mod harness;
pub mod methods;
pub mod metrics;
pub mod survey;
pub mod token_map;
