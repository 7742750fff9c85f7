// index-based loops over small dense vectors/matrices are the house style
// here; Expr's named constructors are deliberate (they fold, operators don't)
#![allow(clippy::needless_range_loop, clippy::should_implement_trait)]

//! Numerical toolkit for degenerate SDEs driven by α-stable jump noise.
//!
//! The pieces fit together like this: [`expr`] carries the coefficient
//! functions symbolically, [`vecfield`] turns them into Lie brackets and the
//! uniform spanning check, [`model`] holds the SDE descriptions (built-in
//! examples, TOML files), [`symmetrize`] absorbs variable Lévy kernels into a
//! change of jump coordinates (and reduces kinetic operators to SDE form),
//! [`simulate`] samples paths together with their Jacobian flows and reduced
//! covariance matrices, [`malliavin`] evaluates the jump-geometry matrices and
//! Laplace-transform decay, and [`analyze`] turns ensembles into density and
//! regularity evidence.

pub mod analyze;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod malliavin;
pub mod model;
pub mod quad;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod simulate;
pub mod symmetrize;
pub mod vecfield;

pub use error::{Error, Result};
pub use expr::{Expr, VarSet};
pub use linalg::Mat;
pub use model::{Jump, ModelSource, SdeModel};
pub use rng::RngStream;
pub use simulate::{PathSample, SimulationScheme, SmallJumpMode};
pub use symmetrize::{KernelTransform, KineticModel};
pub use vecfield::{BracketHierarchy, DomainBox, HormanderReport, VectorField};
