//! Covariate-shift analysis over pre-computed image embeddings.
//!
//! The pipeline trains a KLIEP density-ratio network between a training and
//! a test collection, turns the learned ratios into per-instance suspicion
//! scores, and prepares the artifacts behind two exploration workflows:
//! adaptive nearest-neighbor contrasts around a focal image and
//! cluster-to-cluster contrasts over the most suspicious test clusters.
//! Both are presented as side-by-side suspicion histograms.

pub mod bench;
pub mod clustering;
pub mod data;
pub mod dre;
pub mod error;
pub mod histogram;
pub mod neighborhood;
pub mod projection;
pub mod scoring;
pub mod store;
pub mod synth;

pub use data::{build_store, AnalysisStore, InstanceRecord, LatentSpace, Manifest, Split};
pub use error::{Error, Result};
