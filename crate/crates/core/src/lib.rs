pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod models;
pub mod datagen;
pub mod features;
pub mod reduction;
pub mod ssl;
pub mod metrics;
pub mod finetune;
pub mod harness;
