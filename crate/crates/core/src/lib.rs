//! Chromatic focal-sweep hyperspectral imaging.
//!
//! A scene `x` (H × W × C) is observed through N lens positions, each giving
//! one grayscale image `y_i = C Σ_j K(z_i, λ_j) * x_j`. Reconstruction runs a
//! plug-and-play ADMM over coefficients of a low-dimensional spectral basis,
//! with the data-term solve done per frequency on the padded grid.

pub mod basis;
pub mod error;
pub mod fft;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod solver;
pub mod synth;
pub mod types;

pub use error::{Error, Result, ValidationReport, Violation};
pub use types::{FocalStack, HyperspectralCube, PsfStack, SpectralBasis, SpectralResponse, Validate};
