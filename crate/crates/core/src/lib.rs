//! Attention-as-memory toolkit: train small decoder-only transformers to
//! memorize synthetic corpora, then dissect how their attention layers store
//! and retrieve that content.
//!
//! The crate provides:
//!
//! - a from-scratch f32 tensor core with reverse-mode autodiff
//!   ([`tensor`], [`autodiff`], [`optim`]);
//! - a byte-level BPE tokenizer with word/token span alignment
//!   ([`tokenizer`]);
//! - a pre-norm decoder-only transformer with grouped K/V heads whose
//!   forward pass exposes capture and override hooks for the projected
//!   queries, keys, and values ([`model`]);
//! - synthetic corpus builders and a memorization trainer ([`data`],
//!   [`trainer`]);
//! - interventions that swap or zero attention projections between matched
//!   prompts ([`interventions`]);
//! - probes that score K-projection neurons as memory detectors and extract
//!   keywords from their activations ([`probe`]);
//! - text/memorization metrics and experiment report assembly ([`metrics`],
//!   [`report`]).
//!
//! Everything runs single-threaded with fixed accumulation orders, so any
//! given binary reproduces results byte-for-byte across reruns.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod interventions;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod probe;
pub mod report;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
pub mod util;
