//! File formats, configuration, provenance and the command-line front end
//! for `latent-edit-core`.

pub mod bank;
pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod model;
pub mod num;
pub mod oracle;
pub mod predictors;
pub mod provenance;
pub mod report;
pub mod runner;
pub mod table;

pub use error::{Error, Result};
