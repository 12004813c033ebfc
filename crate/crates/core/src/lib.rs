//! Log-Gaussian Cox process fitting on regular grids.
//!
//! Counts `Y` on an `n1 x n2` raster are modelled as conditionally Poisson with
//! log-intensity `W = Xβ + Z`, where `Z` is a stationary Gaussian field on the
//! torus with a quasi-Matérn spectral density. Parameters are estimated by an
//! EM algorithm built on a Laplace approximation of the latent field; every
//! covariance operation goes through the 2-D FFT.
//!
//! ```
//! use slem::grid::GridSpec;
//! use slem::spectral::{quasi_matern_spectrum, CovParams};
//!
//! let grid = GridSpec::unit(16, 16).unwrap();
//! let f = quasi_matern_spectrum(&CovParams::new(1.0, 3.0).unwrap(), &grid).unwrap();
//! let z = f.sample_gp(7).unwrap();
//! assert_eq!(z.len(), 256);
//! ```

pub mod error;
mod fft;
pub mod grid;
pub mod spectral;
pub mod pcg;
pub mod laplace;
pub mod trace;
pub mod em;
pub mod posterior;
pub mod raster;
pub mod covariates;
pub mod eval;
pub mod simulation;
pub mod io;
pub mod pipeline;

pub use error::{Result, SlemError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/laplace.md")]
    mod laplace {}
    #[doc = include_str!("../../../book/src/em.md")]
    mod em {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/covariates.md")]
    mod covariates {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
