//! Curation toolkit for scene-graph datasets.
//!
//! The crate trains a tiny label-and-geometry discriminator to find predicates
//! that can be guessed without looking at the image, prunes them, and
//! evaluates the resulting splits with frequency baselines and recall@K.
//!
//! Module map:
//! - [`sgdata`]: data model, Visual-Genome-style ingestion, canonical JSONL IO, splits, stats
//! - [`embed`]: word-vector tables and phrase pooling
//! - [`labelspace`]: top-N label selection and predicate clustering
//! - [`pairgeom`]: normalized boxes and the 12-component pair embedding
//! - [`vdnet`]: the discriminator, its exact backprop, training and evaluation
//! - [`curate`]: the end-to-end pruning pipeline and its reports
//! - [`analysis`]: frequency baseline, PredDet/PredCls recall, histograms, synthetic data
//! - [`relheads`]: relationship-aware representation heads over precomputed features

pub mod analysis;
pub mod curate;
pub mod embed;
mod error;
pub mod labelspace;
pub mod pairgeom;
pub mod relheads;
pub mod sgdata;
mod util;
pub mod vdnet;

pub use error::{Error, Result};
