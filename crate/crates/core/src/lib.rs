pub mod augment;
pub mod codec;
pub mod config;
pub mod crypto;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
