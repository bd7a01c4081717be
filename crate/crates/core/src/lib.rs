pub mod degradation;
pub mod error;
pub mod eval;
pub mod imgproc;
pub mod loss;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
pub use imgproc::ImageBuffer;
pub use rng::RngStream;
