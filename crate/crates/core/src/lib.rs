//! Group-wise variational diffeomorphic registration of 3D volumes.
//!
//! A group of `K` volumes is aligned by optimizing, for every moving
//! timepoint, a diagonal Gaussian over a stationary velocity field. The
//! objective is the negative mean pairwise normalized mutual information of
//! the warped group plus a closed-form KL divergence to a graph-Laplacian
//! smoothness prior. Deformations come from scaling-and-squaring integration.
//!
//! Modules, bottom-up:
//!
//! - [`volume`]: scalar grids, percentile normalization, trilinear sampling
//! - [`field`]: composition, integration, warping, Jacobians and their adjoints
//! - [`similarity`]: Parzen-window NMI and its gradient, RMSE
//! - [`prior`]: Laplacian precision prior and the KL term
//! - [`varopt`]: the variational objective and the Adam registration loop
//! - [`harness`]: synthetic groups with ground truth, landmark error
//! - [`io`]: NIfTI-1 volumes and fields, run configuration, reports, CLI runs

pub mod error;
pub mod field;
pub mod harness;
pub mod io;
pub mod prior;
pub mod similarity;
pub mod varopt;
pub mod volume;

pub use error::{Error, Result};
pub use field::VectorField;
pub use varopt::{GroupProblem, Mode};
pub use volume::{GridPoint, Volume};
