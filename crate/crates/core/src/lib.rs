//! Bayesian mixtures of linear mixed models fitted by mean-field variational
//! inference, with greedy split/merge selection of the number of components
//! and tools for analysing the convergence rate of the coordinate updates.

pub mod error;
pub mod eval;
pub mod gating;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod rates;
pub mod varinf;
pub mod vga;

pub use error::{Error, Result};
