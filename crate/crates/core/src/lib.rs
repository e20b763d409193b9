//! Extended batch normalization (EBN) with BN, LN, IN and GN baselines.
//!
//! The crate provides
//!
//! * [`Tensor4`], a dense NCHW `f64` tensor,
//! * the normalization family in [`norm`], with training-mode forward and
//!   backward passes, running statistics and evaluation mode,
//! * a small reverse-mode [`Tape`] with the layers needed for a
//!   fully-connected classifier,
//! * a finite-difference oracle in [`gradcheck`],
//! * inference-time folding of frozen BN/EBN layers in [`fusion`].
//!
//! ```
//! use ebn::norm::{compute_stats, NormKind};
//! use ebn::Tensor4;
//!
//! // Two samples, two features.
//! let x = Tensor4::from_rows(&[[1.0, 3.0], [5.0, 7.0]])?;
//! let stats = compute_stats(&x, NormKind::extended(), 0.0)?;
//! assert_eq!(stats.mean, vec![3.0, 5.0]); // one mean per channel
//! assert_eq!(stats.std, vec![2.0]);       // one std for the whole layer
//! # Ok::<(), ebn::Error>(())
//! ```

pub mod error;
pub mod fusion;
pub mod gradcheck;
mod linalg;
pub mod norm;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use norm::{BatchStats, NormKind, NormParams, RunningState, StdCenter};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape4, Tensor4};
