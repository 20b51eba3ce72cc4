//! Dense linear-algebra and statistics kernels.

mod distance;
mod eigen;
mod finite_diff;
pub mod io;
mod matrix;
mod silhouette;

pub use distance::{pairwise_metric, PairwiseMetric};
pub use eigen::{symmetric_eigen, EigenResult};
pub use finite_diff::{finite_diff_gradient, relative_error};
pub use matrix::{dot, euclidean, norm, squared_distance, Matrix};
pub use silhouette::silhouette_score;
