pub mod autodiff;
pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod perturbation;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod voxel_data;

pub use error::{FormatError, Result, SscError};
pub use tensor::Tensor;
