//! Numerical toolbox for invariant tori of reversible vector fields in the
//! reversible context 2.
//!
//! The crate is organised bottom-up:
//!
//! * [`fourier`], [`grid`]: truncated Fourier series on the n-torus.
//! * [`diophantine`]: spectrum classification and `(tau, gamma)` checks.
//! * [`cohomology`]: small-divisor solvers for `dPhi/dx . omega - Q Phi = F`.
//! * [`revmat`]: involutions, infinitesimally reversible matrices, versality.
//! * [`taylor`], [`revsystem`]: Fourier-Taylor vector fields, reversible
//!   families, the parameter augmentation and the planar toy models.
//! * [`normalizer`]: the Newton iteration to the normal form.
//! * [`ruessmann`]: nondegeneracy tests and the frequency/parameter solves.
//!
//! Numerical code is generic over [`scalar::Real`]; the aliases below fix `f64`.

pub mod cohomology;
pub mod diophantine;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod linalg;
pub mod normalizer;
pub mod revmat;
pub mod revsystem;
pub mod ruessmann;
pub mod scalar;
pub mod taylor;

pub use error::{Error, Result};
pub use fourier::{MultiIndex, SeriesRecord};
pub use scalar::Real;

pub type Series = fourier::FourierSeries<f64>;
pub type MatSeries = fourier::MatrixSeries<f64>;
pub type Involution = revmat::InvolutionStructure<f64>;
pub type RevMat = revmat::RevMatrix<f64>;
pub type Family = revsystem::ReversibleFamily<f64>;
pub type Normalization = normalizer::NormalizationResult<f64>;
pub type AugmentedNormalization = normalizer::AugmentedNormalizationResult<f64>;

/// Crate version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
