//! Tensor engine, building blocks and training loop for multi-scale
//! asymmetric-convolution segmentation networks.
//!
//! The crate is `no_std` with `alloc`; enable the `std` feature for
//! runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{Network, NetworkConfig, Variant};
pub use params::{Mode, ParamId, ParamKind, ParamStore, Session};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
