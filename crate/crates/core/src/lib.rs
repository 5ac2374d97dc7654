pub mod classifier;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod saab;
pub mod volume;

pub use error::{Error, Result};
