pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Init, ParamId, ParamKind, ParamStore};
pub use tape::{Gradients, PaddingSpec, Tape, Var};
pub use tensor::{Scalar, Shape, Tensor};
