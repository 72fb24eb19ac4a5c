//! Two-stream lattice/radical Cross-Transformer for Chinese named-entity
//! recognition, trained with a linear-chain CRF head.
//!
//! The crate is organized around the data path:
//!
//! ```text
//! corpus ── characters, labels, lexicon, radical table
//!    │
//! lattice ── char + matched-word tokens, relative position encodings
//!    │
//! radical_encoder ── CNN over structural components (per lattice token)
//!    │
//! cross_transformer ── two-stream attention, random attention bias, fusion
//!    │
//! crf ── word masking, NLL training objective, Viterbi decoding, span F1
//!    │
//! pipeline ── config, parameter registry, training loop, eval, CLI entry
//! ```
//!
//! All math runs on the self-contained `numerics` engine (dense f64 tensors
//! with a reverse-mode tape and a finite-difference gradient oracle).

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
