//! Matrix Fisher distribution on SO(3).
//!
//! The normalizing constant is computed by quadrature over unit quaternions
//! ([`normalizer::BinghamQuadrature`]) or by a fitted closed-form
//! approximation ([`normalizer::ApproxCoeffs`]). On top of it sit the
//! distribution itself ([`fisher::MatrixFisher`]), the negative
//! log-likelihood loss and its property checks ([`loss`]), fitting
//! ([`estimation`]), pose metrics ([`metrics`]), the virtual-camera
//! preprocessing ([`warp`]) and sphere-marginal plots ([`viz`]).

pub mod error;
pub mod estimation;
pub mod fisher;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod normalizer;
pub mod quadrature;
pub mod rotation;
pub mod viz;
pub mod warp;

pub use error::{Error, Result};
pub use fisher::{FisherParams, MatrixFisher, Mode};
pub use normalizer::{ConcentrationTriple, Normalizer};
pub use rotation::{geodesic_distance, proper_svd, RotationMatrix, UnitQuaternion};
