//! Causal-graph Bayesian updating of seismic ground-failure estimates.
//!
//! Every grid cell carries a small Bayesian network: landslide (LS) and
//! liquefaction (LF) nodes driven by prior susceptibility rasters, an optional
//! building-damage (BD) node gated by a footprint mask, a damage-proxy-map
//! observation `y` with a lognormal likelihood and an exclusivity node that
//! penalizes co-occurring LS and LF. Posteriors are fitted by mean-field
//! variational EM: closed-form coordinate updates per cell and mini-batch
//! gradient ascent on the shared weights.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature turns on
//! rayon-backed parallel E-steps and gradient reductions.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod bound;
pub mod error;
pub mod inference;
pub mod math;
pub mod metrics;
pub mod model;
pub mod oracle;
mod par;
pub mod quadrature;
pub mod raster;

pub use bound::{BoundGradient, PosteriorState, Q_MIN};
pub use error::{Error, Result};
pub use inference::{InferenceOutput, InferenceRunState, MaskOptions};
pub use model::{HyperParams, LocationRecord, NodeId, WeightSet};
pub use raster::{GridSpec, InventoryPoint, Raster, HazardKind};
