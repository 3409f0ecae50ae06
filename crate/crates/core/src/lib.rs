//! Diversity statistics for model ensembles.
//!
//! Given per-model logits, pre-logit embeddings and ground-truth labels, this
//! crate computes pairwise error breakdowns (error inconsistency, error
//! consistency kappa, conversion rates), temperature-scaling calibration,
//! calibrated ensembling and greedy member selection, the confidence-angle
//! specialization measure, representation concatenation/compression with
//! L-BFGS linear probes, and linear CKA.
//!
//! The [`synth`] module generates synthetic model pairs with exactly known
//! joint-correctness statistics, which is how most of the crate is tested.
//!
//! With the default `parallel` feature, batch loops (pairwise tables, greedy
//! candidate evaluation, subset enumeration, probe grids) run on rayon.
//! Without it the same code runs sequentially and produces identical output.

pub mod calibration;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod pairwise;
pub mod par;
pub mod probe;
pub mod specialization;
pub mod synth;

pub use error::{Error, Result};
