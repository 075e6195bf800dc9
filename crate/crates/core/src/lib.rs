//! Core of the satfusion toolkit.
//!
//! Everything here is pure computation on in-memory tensors and builds without
//! `std` (only `alloc` is required):
//!
//! * [`tensor`], [`ops`], [`graph`], [`param`], [`optim`]: a small dense tensor
//!   type, the neural primitives, a tape-based reverse-mode autodiff graph and
//!   Adam/SGD optimizers.
//! * [`wald`]: synthetic multi-temporal scenes built by degrading a
//!   ground-truth multispectral image and perturbing each low-resolution frame.
//! * [`metrics`]: PSNR, SSIM, SAM, ERGAS, MAE and MSE.
//! * [`loss`]: the weighted four-term training loss, brightness compensation
//!   and the Lanczos shift-search minimum loss.
//! * [`model`]: the fusion network (multi-temporal fusion, pan-sharpening
//!   injection and the residual composition head).
//! * [`train`]: deterministic training, evaluation, sweeps and ablations.
//!
//! File formats and the command line live in the `satfusion` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod param;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod wald;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::{Shape, Tensor};
