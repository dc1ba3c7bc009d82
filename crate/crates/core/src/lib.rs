pub mod designs;
pub mod error;
pub mod hiermodel;
pub mod monitoring;
pub mod outcomes;
pub mod rng;
pub mod simengine;
pub mod validation;

pub use error::{Error, Result};

/// Version of the engine, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
