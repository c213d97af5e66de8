//! Dense `f64` numerics: tensors, autodiff, SVD, assignment and RNG.

mod graph;
mod hungarian;
mod linalg;
mod rng;
mod svd;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use hungarian::{hungarian, Assignment};
pub use linalg::{cosine, dot, gemm, matmul, norm, GemmOperand};
pub use rng::RngState;
pub use svd::{svd, SvdResult};
pub use tensor::Tensor;
