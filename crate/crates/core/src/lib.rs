pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod featurizer;
pub mod model;
pub mod scorer;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Ablation, Dims, ModelConfig, SimModel};
pub use tensor::Tensor;
