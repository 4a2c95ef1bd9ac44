//! Host side of layer-parallel training: configuration files, CSV data,
//! run artifacts, sweeps and a thread-pool executor for the multigrid
//! solver in `layertime_core`.

pub mod artifacts;
pub mod config;
pub mod dataset_io;
pub mod executor;
pub mod run;
pub mod sweep;

pub use layertime_core as core;
