pub mod cache;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod http;
pub mod index;
pub mod knowledge;
pub mod linking;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod service;
pub mod text;

pub use error::{Error, Result};
pub use text::normalize_mention;
