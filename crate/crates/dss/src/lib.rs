//! Diagonal state space (DSS) sequence layers, from discretization to a
//! trainable encoder stack.
//!
//! The crate is organized bottom-up:
//!
//! - [`ssm`]: continuous/discrete diagonal state space systems and the
//!   brute-force recurrence used as an oracle for everything above it.
//! - [`kernel`]: the closed-form convolution kernel via a stabilized
//!   complex row-softmax.
//! - [`init`]: eigenvalue initialization schemes (HiPPO, exp-random,
//!   S4D-Inv, S4D-Lin, linear) plus the w and delta draws.
//! - [`fft`] / [`conv`]: radix-2 FFT and O(L log L) causal convolution with
//!   an O(L^2) reference and bidirectional composition.
//! - [`layer`]: the DSS module (pointwise-conv sandwich, kernel convolution
//!   with shortcut, GELU, mixing, GLU, residual).
//! - [`model`]: encoder blocks (macaron feed-forward, multi-head attention,
//!   a sequence-mixing module per variant) and the encoder stack.
//! - [`autodiff`] / [`train`]: a small reverse-mode tape covering every
//!   operation in the forward graph, finite-difference checking, toy tasks,
//!   AdamW with a one-cycle schedule, and eigenvalue-trajectory tracking.
//! - [`config`] / [`commands`] / [`report`]: the JSON run configuration and
//!   the command implementations behind the `dss` binary.
//!
//! Runnable examples for each capability live under `examples/`.

pub mod autodiff;
pub mod commands;
pub mod config;
pub mod conv;
pub mod error;
pub mod fft;
pub mod graph;
pub mod init;
pub mod kernel;
pub mod layer;
pub mod model;
pub mod optim;
pub mod report;
pub mod ssm;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{DssError, Result};
