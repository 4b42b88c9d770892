pub mod drift;
pub mod error;
pub mod lexicon;
pub mod persona;
pub mod pipeline;
pub mod report;
pub mod session;
pub mod stats;

pub use error::{Error, Result};
