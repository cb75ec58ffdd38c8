pub mod conservation;
pub mod deviation;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod integrate;
pub mod linalg;
pub mod maxwell5d;
pub mod scenario;

pub use error::{Error, Result};
