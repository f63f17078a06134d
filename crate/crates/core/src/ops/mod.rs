//! Forward kernels and adjoints behind the tape operators.

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
pub mod sample;

pub use conv::ConvGeom;
pub use elementwise::{BinaryKind, PadMode, UnaryKind};
pub use norm::BatchMoments;
