//! File formats and command implementations behind the `groundfail-svi`
//! binary: Esri ASCII grids, CSV inventories and a strict JSON run config.

pub mod asc;
pub mod commands;
pub mod config;
pub mod error;
pub mod inventory;

pub use config::RunConfig;
pub use error::{CliError, Result};
