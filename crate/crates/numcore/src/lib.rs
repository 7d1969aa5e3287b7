//! Dense `f64` tensors and a recording tape for reverse-mode gradients.
//!
//! The op set is the one needed by the alignment model: affine maps,
//! concatenation and slicing, softmax variants, layer norm, pointwise
//! nonlinearities, reductions, grouped (per-entity) attention and sparse
//! graph attention. [`finite_diff_check`] verifies any loss built from them.

mod error;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use error::{NumError, NumResult};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter, CHECKPOINT_MAGIC};
pub use tape::{NeighborLists, Tape, Var};
pub use tensor::{matmul, matmul_nt, Tensor};
