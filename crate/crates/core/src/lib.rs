pub mod error;
pub mod kg;
pub mod numerics;
pub mod select;
pub mod transformer;
pub mod encoder;
pub mod gat;
pub mod modality;
pub mod fusion;
pub mod config;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
