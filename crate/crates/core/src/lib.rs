pub mod alphabet;
pub mod attention;
pub mod backbone;
pub mod chunking;
pub mod ctc;
pub mod encoders;
pub mod error;
pub mod image;
pub mod lm;
pub mod mert;
pub mod model;
pub mod pipeline;
pub mod metrics;
pub mod tensor;
pub mod transformer;
pub mod weights;

pub use error::{Error, Result};
