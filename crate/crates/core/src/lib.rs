//! Importance-weighted meta-imitation learning.

pub mod dagger;
pub mod encoder;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod io;
pub mod policy;
pub mod reweight;

pub use error::{Error, Result};
