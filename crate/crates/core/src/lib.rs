pub mod adaptation;
pub mod cer;
pub mod combo;
pub mod design;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod spending;
pub mod stagewise;

pub use error::{Error, Result};
pub use graph::{ClosureWeights, GraphSpec, IndexSet, ValidationReport, Violation, WeightingGraph};
