//! First-order Sobol indices from Gaussian-process surrogates, with
//! sequential sampling rules that target the indices directly.
//!
//! Start with [`gp::GpModel`] for the surrogate, [`sobol`] for the
//! estimators and [`driver::run`] for the active-learning loop. The guide in
//! `book/` walks through each part.

pub mod acquisition;
pub mod benchmarks;
pub mod driver;
pub mod error;
pub mod gp;
pub mod harness;
pub mod marginal;
pub mod sobol;
pub mod special;

pub use error::{GsaError, Result};

// Runs the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kriging.md")]
    mod kriging {}
    #[doc = include_str!("../../../book/src/main-effects.md")]
    mod main_effects {}
    #[doc = include_str!("../../../book/src/sobol.md")]
    mod sobol {}
    #[doc = include_str!("../../../book/src/acquisition.md")]
    mod acquisition {}
    #[doc = include_str!("../../../book/src/sequential.md")]
    mod sequential {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
}
