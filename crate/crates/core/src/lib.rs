//! Numerical laboratory for non-symmetric Dirichlet forms on finite metric
//! measure spaces.
//!
//! A [`mm_space::DiscreteSpace`] is a weighted graph whose vertices embed
//! isometrically into a shared finite [`mm_space::AmbientSpace`]. On it the
//! crate assembles the form
//!
//! ```text
//! E(f,g) = ½∫⟨A∇f,∇g⟩dm + ∫b₁(f)g dm + ∫f b₂(g) dm + ∫fgc dm
//! ```
//!
//! with the diffusion multiplier `a`, two derivations `θ₁`, `θ₂` (antisymmetric
//! edge fields) and a killing field `c`, extracts the generator pair `(L, L̂)`,
//! and provides semigroups, resolvents, heat kernels, cross-space convergence
//! defects, killed continuous-time Markov chain sampling and conservativeness
//! diagnostics.

pub mod calculus;
pub mod constructions;
pub mod convergence;
pub mod diagnostics;
pub mod diffusion_sim;
pub mod dirichlet_form;
pub mod error;
pub mod io;
pub mod mm_space;
pub mod semigroup;

mod numeric;

pub use error::{LabError, Result};
