//! Dense tensors, the 2-D DFT, elementary nonlinearities, the convolution
//! adaptor and the finite-difference gradient harness.

mod conv;
mod dft;
pub mod gradcheck;
pub mod io;
mod nonlin;
mod rng;
mod tensor;

pub use conv::{
    conv_stack_backward, conv_stack_forward, conv_stack_forward_cached, Activation, ConvLayer,
    ConvStackCache, ConvStackWeights,
};
pub use dft::{dft2, dft2_complex, idft2};
pub use gradcheck::{finite_diff_gradient, gradient_relative_error};
pub use nonlin::{
    cosine_similarity, l2_norm, leaky_relu, sigmoid, softmax, softmax_in_place, softmax_rows,
    LEAKY_SLOPE,
};
pub use rng::{derive_seed, Rng};
pub use tensor::{ComplexTensor, Tensor};
