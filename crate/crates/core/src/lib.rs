pub mod bench;
pub mod config;
pub mod contrastive;
pub mod diffmath;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod predictor;
pub mod retrieval;
pub mod seed;
pub mod synth;
pub mod zoo;
pub mod zoo_builder;

pub use error::{Error, ErrorKind, Result};
