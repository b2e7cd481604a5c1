//! geomon: a dual-observer structural monitor for relay population metadata.
//!
//! Two frozen observers watch daily relay population snapshots: a
//! contractive denoising autoencoder over 17 clean features (geometric
//! observer) and a Gaussian-Bernoulli RBM over the full 191-feature vector
//! (thermodynamic observer). A per-window canonical correlation bridge
//! measures their agreement, an eigendecomposition of the encoder's metric
//! tensor splits input space into stiff and soft directions, and a cascade
//! of thresholded gates classifies each consecutive day-pair into a
//! seven-label event taxonomy.
//!
//! The `examples/` directory is the primary tour: one runnable example per
//! capability (training, geometry, scenario sweeps, the Monte Carlo null,
//! fixture replay, ingestion). A thin `geomon` binary exposes the same
//! capabilities as subcommands.

pub mod cca;
pub mod cdae;
pub mod ejt;
pub mod error;
pub mod fixtures;
pub mod gates;
pub mod grbm;
pub mod model_io;
pub mod population;
pub mod records;
pub mod schema;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
