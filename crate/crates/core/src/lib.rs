//! Linear attention with Householder-reflected, variance-modulated feature maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense row-major arrays, a seeded generator, a Jacobi
//!   eigensolver, power-iteration PCA and central finite differences.
//! * [`reflect`]: general, 2D closed-form, block-wise and global Householder
//!   reflections.
//! * [`featmap`]: the reflecting feature map (global reflection, head split,
//!   block variance, angle modulation, block reflection, ReLU).
//! * [`attention`]: softmax reference attention and the two evaluation orders
//!   of kernelised linear attention.
//! * [`gradcheck`]: hand-written reverse-mode gradients and a finite-difference
//!   harness.
//! * [`diversity`]: activation-mask statistics, collapse constructions,
//!   covariance mixing and kernel topology export.
//! * [`harness`]: a toy trainability experiment and the parameter file format.
//! * [`bench`]: wall-time and transient-buffer scaling measurements.
//! * [`suites`]: seeded equivalence, isometry and spectrum checks with
//!   explicit tolerances.

pub mod attention;
pub mod bench;
pub mod diversity;
mod error;
pub mod featmap;
pub mod gradcheck;
pub mod harness;
pub mod numerics;
pub mod reflect;
pub mod suites;

pub use error::{Error, Result};
pub use numerics::{Array, Rng};
