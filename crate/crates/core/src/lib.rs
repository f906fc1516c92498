//! Nonparametric estimation of the mean, second-order moment, covariance and
//! lag-h autocovariance of random fields on the unit sphere from sparse, noisy
//! point samples.
//!
//! Estimators are finite kernel expansions obtained by solving ridge systems
//! in zonal kernels generated by spherical pseudo-differential operators
//! (Sobolev series or closed-form Matérn). The second-moment system uses the
//! block Khatri-Rao structure of the pair Gram matrix and is solved by
//! conjugate gradients.

pub mod cv;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod field;
pub mod gram;
pub mod harmonics;
pub mod kernel;
pub mod postprocess;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod sphere;

pub use cv::{kfold_cv_second_moment, CVConfig, CVReport};
pub use dataset::{Dataset, DatasetMeta, Replicate};
pub use error::{Error, Result};
pub use estimate::{
    eval_covariance, eval_mean, eval_second_moment, fit_lag_autocov, fit_mean,
    fit_second_moment, FitDiagnostics, MeanEstimate, SecondMomentEstimate,
};
pub use field::{simulate_dataset, simulate_far1, SourceModel};
pub use gram::VectorizationSpec;
pub use kernel::{KernelSpec, ZonalKernel};
pub use postprocess::{eval_on_grid, l2_error, project_psd, GridField, PsdReport};
pub use solver::SolverConfig;
pub use sparse::CsrMatrix;
pub use sphere::{fibonacci_grid, SphereGrid, SphericalPoint};
