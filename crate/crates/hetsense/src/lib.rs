//! Multi-environment low-rank matrix sensing.
//!
//! The data model: each environment `e` carries a symmetric signal
//! `X* + X^(e)` where the rank-r1 positive-semidefinite part `X* = U* U*^T`
//! is shared by every environment and the rank-<=r2 part
//! `X^(e) = V* Sigma^(e) V*^T` varies. Batches of linear measurements
//! `y_i = <A_i, X* + X^(e)>` arrive one environment at a time, and the
//! question is which component online gradient descent on the
//! over-parameterized model `y = <A, U U^T>` actually recovers.
//!
//! The crate provides:
//!
//! * [`sensing`] — ground-truth models, environment laws, measurement
//!   batches, and empirical checks of the structural assumptions;
//! * [`rip`] — restricted-isometry diagnostics: quadratic forms, the RIP
//!   error operator, randomized delta estimation, and operator-bound checks;
//! * [`optim`] — the three training procedures: heterogeneous-batch SGD,
//!   pooled full-batch GD, and the truncated/shrunk rank-one variant for
//!   quadratic-activation networks;
//! * [`dynamics`] — the invariant/spurious/error decomposition of iterates,
//!   deterministic calibration sequences, the reflection-absorption
//!   controller process, and phase-analysis predicates.

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod rip;
pub mod seed;
pub mod sensing;

pub use error::{Error, Result};
