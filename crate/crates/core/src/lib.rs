pub mod ablate;
pub mod backbone;
pub mod cli;
pub mod comm;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod gradcases;
pub mod model;
pub mod params;
pub mod proto;
pub mod train;

pub use error::{Error, Result};
