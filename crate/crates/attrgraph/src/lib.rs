//! File formats, experiment runner and command line front end for
//! `attrgraph-core`.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod error;
pub mod formats;
pub mod images;
pub mod run;

pub use error::{Error, Result};
