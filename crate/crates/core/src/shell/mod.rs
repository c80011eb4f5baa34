//! File formats and command implementations behind the `timegate` binary.

pub mod commands;
pub mod config;
pub mod exit;
pub mod schema;

pub use config::Config;
pub use schema::{ingest_metrics, parse_record_line, read_records, record_to_line, write_records};
