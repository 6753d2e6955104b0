//! Data ingestion, configuration and result export.

pub mod artifacts;
pub mod config;
pub mod csv_data;
pub mod plane;
