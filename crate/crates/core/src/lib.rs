pub mod align;
pub mod error;
pub mod image;
pub mod io;
pub mod isp;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod raw;
pub mod reconstruct;
pub mod schema;
pub mod synth;

pub use error::{Error, Result};
