//! Std companion of `cdra-core`: CDR file ingest, the durable case store,
//! the HTTP service and the `cdra` command line.

pub mod cli;
pub mod config;
pub mod ingest;
pub mod service;
pub mod store;
