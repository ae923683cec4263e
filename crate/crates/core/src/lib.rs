pub mod autodiff;
pub mod bounds;
pub mod error;
pub mod fields;
pub mod integrate;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
