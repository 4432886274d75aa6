//! Std companion of `tscore`: feed ingestion, persisted table formats,
//! dataset directories, the `tsim` CLI and the HTTP service.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod exec;
pub mod formats;
pub mod gtfs;
pub mod osm;
pub mod pipeline;
pub mod service;
