//! Operational surface of the engine: the ingest/query service used by the
//! `erimap` binary.

pub mod server;
