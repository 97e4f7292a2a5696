//! Navigator-free manifold reconstruction of free-breathing, ungated cardiac
//! MRI from golden-angle spiral data.
//!
//! The pipeline estimates the inter-frame manifold Laplacian from the densely
//! sampled centre of k-space with an iterative kernel low-rank scheme, then
//! solves one Laplacian-regularized least-squares problem at full resolution.

pub mod error;
pub mod manifold;
pub mod metrics;
pub mod nufft;
pub mod operators;
pub mod phantom;
pub mod series;
pub mod solvers;
pub mod trajectory;

pub use error::{Error, Result};
pub use series::DynamicImageSeries;
