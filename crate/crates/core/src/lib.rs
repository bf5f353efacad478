pub mod augment;
pub mod cli;
pub mod config;
pub mod ctcm;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod facm;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod spectral;
pub mod tape;
pub mod training;
pub mod workflow;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Ablation, Model, ModelConfig, Objective};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Padding, Tape, Var};
pub use tensor::Tensor;
