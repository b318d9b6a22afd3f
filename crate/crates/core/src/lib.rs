//! Widely-linear complex reparameterization of real linear layers, phase-aware
//! 2-bit quantization with residual stages, a packed on-disk format, and
//! multiplication-free / lookup-table inference kernels.

pub mod bench;
pub mod error;
pub mod kernels;
pub mod packing;
pub mod phasequant;
pub mod qat;
pub mod residual;
pub mod scalar;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod toy;
pub mod widely_linear;

pub use error::{Error, Result};
