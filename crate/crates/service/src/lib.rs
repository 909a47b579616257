//! Inspection service: event store, HTTP API, model loading, training and
//! report helpers behind the `instqc` binary.

pub mod backends;
pub mod config;
pub mod multipart;
pub mod reports;
pub mod server;
pub mod store;
pub mod training;
