pub mod backbone;
pub mod blob;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod head;
pub mod synthetic;
pub mod taxonomy;
pub mod training;

pub use error::{CoreError, Result};
