//! Dense symmetric linear algebra, statistics and regression primitives.

pub mod eigen;
pub mod fit;
pub mod matrix;
pub mod stats;

pub use eigen::{sym_eigen, SpectrumResult};
pub use fit::{fit_escape_model, weighted_linfit, FitReport, LineFit, ModelKind, Weighting};
pub use matrix::{dot, norm, normalized, squared_distance, DenseMatrix};
pub use stats::{
    average_ranks, covariance, mean, median, pearson, sample_std, sign_test_p_value, spearman,
};
