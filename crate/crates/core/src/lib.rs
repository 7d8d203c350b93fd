//! Delivery-delay prediction over a region-level supply graph.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`ingest`] parses the raw order CSV and audits the feature manifest for
//!   outcome leakage.
//! * [`graph`] builds the static node index, lane list and lane statistics.
//! * [`snapshots`] cuts daily node features into sliding windows, attaches
//!   next-window labels and splits chronologically.
//! * [`model`] is the patch transformer, edge-aware attention and dual head.
//! * [`train`] and [`metrics`] fit and score models; [`experiment`] runs
//!   seeds and ablations.
//! * [`explain`] turns attention into per-node risk.
//! * [`pipeline`] wires all of it behind one config file with a
//!   digest-keyed artifact cache.

pub mod error;
pub mod experiment;
pub mod explain;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod snapshots;
pub mod train;
mod util;

pub use eagle_autodiff::{Precision, Real};
pub use error::{EagleError, ErrorClass, Result};
pub use util::sha256_hex;
