//! Dense vector/matrix primitives, activations, scaled softmax, cosine
//! similarity and the gradient-checking harness the rest of the crate is
//! built on. Everything is 64-bit; values are validated as finite at
//! construction boundaries.

mod gradcheck;
mod ops;
mod tensor;

pub use gradcheck::{grad_check, FlatTensors, GradCheckEntry, GradCheckReport, TensorSet};
pub use ops::{
    affine, affine_backward, cosine, cosine_backward, relu, relu_vec, sigmoid, sigmoid_vec,
    softmax_scaled, softmax_scaled_backward, tanh_vec,
};
pub use tensor::{Matrix, Vector};

pub(crate) use tensor::dot;
