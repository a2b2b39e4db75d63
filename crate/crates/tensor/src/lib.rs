//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! [`Tensor`] is an immutable-by-convention value. Recording a computation
//! means creating leaves on a [`Tape`] and calling operations on the returned
//! [`Var`] handles; [`Tape::backward`] then yields [`Gradients`] for every
//! leaf created with [`Tape::param`].
//!
//! ```
//! use pemp_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod error;
mod gemm;
pub mod gradcheck;
mod op;
mod ops;
mod serialize;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::conv_output_size;
pub use ops::loss::PROB_FLOOR;
pub use ops::resize::resize_bilinear;
pub use ops::shape::concat;
pub use ops::{ConvSpec, Mode};
pub use serialize::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
