//! Small differentiable building blocks: raw kernels, a recording tape
//! for reverse-mode gradients, recurrent and attention layers, losses and
//! the Adam optimizer over named parameters.

pub mod attention;
pub mod dropout;
pub mod gemm;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use dropout::{dropout, Dropout, DropoutMode};
pub use lstm::{bilstm, lstm, LstmParams};
pub use params::{AdamConfig, Gradients, Init, Param, ParameterSet};
pub use tape::{Backward, Tape, Var};
pub use tensor::Tensor;
