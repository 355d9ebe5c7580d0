//! Multimodal cloud removal for optical satellite imagery.

pub mod cgan;
pub mod checkpoint;
pub mod config;
pub mod convlstm;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod seed;

pub use error::{PlfmError, Result};
