// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod majorization;
pub mod nonlinear;
pub mod oracle;
pub mod serial;
pub mod spectral;
pub mod tensor;
pub mod witness;

pub use error::{Error, Result};
pub use tensor::Matrix;
