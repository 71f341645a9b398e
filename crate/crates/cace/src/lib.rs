//! File formats, configuration and the command-line front end of
//! [`cace_core`].

pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod memory_format;
pub mod pnm;
pub mod report;

pub use binio::FormatError;
