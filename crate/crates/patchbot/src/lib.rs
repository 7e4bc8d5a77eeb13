//! Deployable face of the triage bot: configuration, the on-disk store, the
//! operations shared by the CLI and the HTTP API, and both front ends.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod jobs;
pub mod ops;
pub mod store;

pub use config::Config;
pub use error::AppError;
