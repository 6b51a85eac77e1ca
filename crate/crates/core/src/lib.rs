//! Multi-view prompt-tuning for relation extraction.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: relation instances, synthetic corpora, JSONL I/O and k-shot sampling.
//! - [`vocab`]: word-level vocabulary, virtual relation words and prompt templates.
//! - [`nn`]: tensors, reverse-mode tape, the tiny masked language model, AdamW.
//! - [`mvre`]: view posterior, multi-view and Global-Local losses, inference and
//!   virtual-word initialization.
//! - [`experiments`]: training, micro-F1 and the analysis protocols.

pub mod data;
pub mod error;
pub mod experiments;
pub mod mvre;
pub mod nn;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};
