pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod hilbert;
mod linalg;
pub mod model;
pub mod protocol;

pub use error::{Error, Result};
pub use linalg::C64;
