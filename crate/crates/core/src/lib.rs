//! Gromov-Wasserstein correspondence plans between discrete Euclidean measures.
//!
//! The crate covers the quadratic cost `(|x - x'|^2 - |y - y'|^2)^2` and the
//! inner-product cost `(<x, x'> - <y, y'>)^2`, both with squared (p = 2) loss:
//!
//! * [`measures`]: discrete probability measures, centering, Gaussian
//!   smoothing on a grid and the special measure families used by the
//!   experiments (Beinert-type counterexamples, two-component measures).
//! * [`transport`]: exact discrete optimal transport via a network simplex,
//!   monotone rearrangements and 1D correlations.
//! * [`gw`]: GW objective (quadruple sum and moment-factorized), its bilinear
//!   form, the linearized cost, an exhaustive QAP oracle and alternating
//!   minimization.
//! * [`mscan`]: the 1D correlation scan that recovers global minimizers from
//!   a family of linear programs, and bi-map detection.
//! * [`adversarial`]: gradient descent over point positions that makes both
//!   monotone rearrangements strictly suboptimal.
//! * [`analysis`]: cross-correlation matrix, SVD frame and structure class,
//!   reduced cost and its exponential map, submodularity regions, separation
//!   bound and relaxation tightness residuals.
//! * [`io`]: JSON and CSV file formats shared with the command-line tool.

pub mod adversarial;
pub mod analysis;
mod error;
pub mod gw;
pub mod io;
pub mod measures;
pub mod mscan;
pub mod transport;

pub use error::{Error, Result};
pub use gw::GwCostKind;
pub use measures::DiscreteMeasure;
pub use transport::{CostMatrix, TransportPlan};
