pub mod design;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod fourier;
pub mod inference;
pub mod regularity;
pub mod rng;
pub mod simulate;
mod util;

pub use error::{FdaError, Result};
