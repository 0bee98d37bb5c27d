//! Acoustic word embeddings and query-by-example keyword search.
//!
//! The crate covers the whole pipeline: feature corpora and normalization
//! ([`corpus`]), a small reverse-mode numerical core ([`nn`]), embedders
//! ([`embed`]), contrastive and reconstruction training ([`train`]), a DTW
//! baseline ([`dtw`]), windowed search ([`kws`]) and ranking metrics
//! ([`metrics`]). [`synth`] builds synthetic word corpora.

pub mod corpus;
pub mod dtw;
pub mod embed;
pub mod error;
pub mod gradsuite;
pub mod kws;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorFamily, Result};
