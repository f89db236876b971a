//! Contact-tracing engine core.
//!
//! Reconstructs an infection web from call data records, reconstructs and
//! publishes patient movement paths, watches quarantine geofences, and runs
//! a rotating-key exposure notification protocol with a proximity
//! simulator. Everything here is pure computation over `alloc`; file
//! formats, persistence and the network service live in the `cdra` crate.

#![no_std]

extern crate alloc;

pub mod cdr;
pub mod ens;
pub mod geo;
pub mod graph;
pub mod investigation;
pub mod quarantine;
pub mod sim;

pub use cdr::{CallType, CdrError, CdrRecord, DateOrder, Subscriber, TimeWindow};
pub use graph::{ContactGraph, ExportFormat, NodeStatus};
pub use investigation::{CaseError, InvestigationCase, TestEvent, TestResult};
