pub mod bench;
pub mod chain;
pub mod error;
pub mod geometry;
pub mod goalsel;
pub mod graspref;
pub mod planner;
pub mod scene;
pub mod trajopt;

pub use error::{Error, Result};
