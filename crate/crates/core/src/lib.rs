#![no_std]

extern crate alloc;

pub mod editor;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod linfit;
pub mod metrics;
pub mod neutralizer;
pub mod nn;
pub mod sampler;
pub mod types;

pub use error::{Error, Result};
pub use types::{AttributeKind, AttributeMeta, AttributeRole, AttributeTable, Direction, DirectionBank, LatentCode, Provenance, TableBuilder};
