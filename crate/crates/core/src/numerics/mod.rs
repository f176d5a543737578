//! Dense linear algebra, reverse-mode differentiation and seeded randomness.

pub mod linalg;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use linalg::{effective_rank, svd, truncate_rank, SvdResult};
pub use ops::{layer_norm, scaled_softmax, xavier_init, InitMode};
pub use params::{finite_diff_gradient, GradTensor, Gradients, ParamId, ParameterStore};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
