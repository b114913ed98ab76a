pub mod error;
pub mod harness;
pub mod kdtree;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod special;
pub mod surrogate;

pub use error::{Error, Result};
