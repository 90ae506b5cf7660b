//! Dense row-major kernels shared by the decoder, the pruner and the cost
//! model. Every kernel that the cost model depends on can record its
//! operation count into an [`OpCounter`].

mod counter;
mod kernels;
mod matrix;
mod scalar;

pub use counter::OpCounter;
pub(crate) use counter::record;
pub use kernels::{
    add_row_bias, argmax, bottom_indices, derive_seed, gemm_counted, layer_norm, matmul,
    matmul_nt, seeded_init, sigmoid, softmax_rows, softmax_rows_in_place, top_indices,
};
pub use matrix::{Mat, MatMut, MatRef};
pub use scalar::Scalar;
